// HTTP clients against an in-process fake service on the loopback interface.

#include <atomic>
#include <cstdlib>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "maids/remote.hpp"

using namespace maids;
using namespace std::chrono_literals;

namespace {

/// Embedding + chat endpoints with scriptable failures.
class FakeService {
public:
    std::atomic<int> embed_requests{0};
    std::atomic<int> chat_requests{0};
    std::atomic<int> fail_first{0};  // answer 503 to this many requests
    std::atomic<int> short_by{0};    // drop this many embeddings per response
    std::size_t dim = 8;
    std::string chat_reply = "LABEL: DoS";
    nlohmann::json last_chat_body;
    std::string last_auth;

    FakeService() {
        server_.Post("/v1/embeddings", [this](const httplib::Request& req, httplib::Response& res) {
            ++embed_requests;
            if (fail_first > 0) {
                --fail_first;
                res.status = 503;
                return;
            }
            auto body = nlohmann::json::parse(req.body);
            nlohmann::json data = nlohmann::json::array();
            const auto& input = body.at("input");
            for (std::size_t i = 0; i + static_cast<std::size_t>(short_by.load()) < input.size(); ++i) {
                // Encode the input's trailing number in the first component
                // so the test can check ordering.
                std::vector<float> v(dim, 0.0f);
                v[0] = std::stof(input[i].get<std::string>().substr(1));
                v[1] = 1.0f;
                data.push_back({{"embedding", v}});
            }
            res.set_content(nlohmann::json{{"data", data}}.dump(), "application/json");
        });
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            ++chat_requests;
            last_auth = req.get_header_value("Authorization");
            if (fail_first > 0) {
                --fail_first;
                res.status = 500;
                return;
            }
            last_chat_body = nlohmann::json::parse(req.body);
            nlohmann::json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", chat_reply}}}}}}};
            res.set_content(reply.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~FakeService() {
        server_.stop();
        thread_.join();
    }

    std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

const RetryPolicy kFast{3, 5ms, 2.0};

EmbedderSpec embed_spec(const FakeService& s) {
    EmbedderSpec spec;
    spec.kind = EmbedderKind::remote;
    spec.dim = s.dim;
    spec.endpoint = s.url("/v1/embeddings");
    spec.model_name = "fake-embed";
    return spec;
}

AgentSpec chat_spec(const FakeService& s) {
    AgentSpec spec;
    spec.kind = AgentKind::remote_llm;
    spec.endpoint = s.url("/v1/chat/completions");
    spec.timeout = 2000ms;
    return spec;
}

}  // namespace

TEST(RemoteEmbedder, BatchesInOrder) {
    FakeService s;
    RemoteEmbedder e(embed_spec(s), kFast);
    std::vector<std::string> texts;
    for (int i = 0; i < 1000; ++i) texts.push_back("t" + std::to_string(i));
    auto out = e.embed_batch(texts);
    ASSERT_EQ(out.size(), 1000u);
    EXPECT_EQ(s.embed_requests.load(), 16);  // ceil(1000 / 64)
    for (int i = 0; i < 1000; ++i) {
        // Normalized (i, 1): the ratio of the first two components recovers i.
        EXPECT_NEAR(out[i].values()[0] / out[i].values()[1], static_cast<double>(i), 1e-3);
        EXPECT_EQ(out[i].dim(), s.dim);
    }
    EXPECT_EQ(e.spec().fingerprint(), "remote:dim=8:model=fake-embed");
}

TEST(RemoteEmbedder, WrongCountOrLengthIsDimensionMismatch) {
    FakeService s;
    s.short_by = 1;
    RemoteEmbedder e(embed_spec(s), kFast);
    std::vector<std::string> texts = {"t1", "t2", "t3"};
    try {
        e.embed_batch(texts);
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::DimensionMismatch);
    }
    s.short_by = 0;
    auto spec = embed_spec(s);
    spec.dim = 16;
    RemoteEmbedder wrong(spec, kFast);
    try {
        wrong.embed("t1");
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::DimensionMismatch);
    }
}

TEST(RemoteEmbedder, RetriesServerErrorsThenGivesUp) {
    FakeService s;
    s.fail_first = 2;
    RemoteEmbedder e(embed_spec(s), kFast);
    EXPECT_NO_THROW(e.embed("t5"));
    EXPECT_EQ(s.embed_requests.load(), 3);

    s.fail_first = 10;
    try {
        e.embed("t6");
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::RemoteUnavailable);
    }
    std::vector<std::string> empty;
    EXPECT_THROW(e.embed_batch(empty), Error);
}

TEST(RemoteChat, RequestShapeAndParsing) {
    FakeService s;
    ::setenv("MAIDS_FAKE_CHAT_KEY", "test-token", 1);
    auto spec = chat_spec(s);
    spec.api_key_env = "MAIDS_FAKE_CHAT_KEY";
    RemoteChatAgent agent(spec, ClassSet::bot_iot(), kFast);
    auto v = agent.classify(build_classification_prompt("{\"a\":1}", NoContext{}, ClassSet::bot_iot()));
    EXPECT_EQ(v.label.name(), "DoS");
    EXPECT_EQ(v.parse_status, ParseStatus::exact);
    EXPECT_EQ(s.last_chat_body["temperature"].get<double>(), 0.0);
    EXPECT_EQ(s.last_chat_body["model"], "gpt-4o");
    ASSERT_EQ(s.last_chat_body["messages"].size(), 2u);
    EXPECT_EQ(s.last_chat_body["messages"][0]["role"], "system");
    EXPECT_EQ(s.last_auth, "Bearer test-token");
    ::unsetenv("MAIDS_FAKE_CHAT_KEY");

    s.chat_reply = "IF in_bytes >= 10 THEN class=DDoS";
    auto classes = ClassSet::bot_iot();
    auto rule = agent.induce_rule(build_induction_prompt("{\"a\":1}", classes.at(0), classes.at(1), NoContext{}));
    EXPECT_EQ(rule.parse_status, ParseStatus::exact);
    EXPECT_EQ(rule.rule.target_class, classes.at(1));
}

TEST(RemoteChat, ExhaustedRetriesAreAgentUnavailable) {
    FakeService s;
    s.fail_first = 100;
    auto spec = chat_spec(s);
    spec.retries = 2;
    RemoteChatAgent agent(spec, ClassSet::bot_iot(), kFast);
    try {
        agent.classify(build_classification_prompt("{}", NoContext{}, ClassSet::bot_iot()));
        FAIL();
    } catch (const Error& err) {
        EXPECT_EQ(err.code(), ErrorCode::AgentUnavailable);
    }
    EXPECT_EQ(s.chat_requests.load(), 2);

    // Nothing listening at all.
    spec.endpoint = "http://127.0.0.1:1/v1/chat/completions";
    RemoteChatAgent dead(spec, ClassSet::bot_iot(), kFast);
    EXPECT_THROW(dead.classify(build_classification_prompt("{}", NoContext{}, ClassSet::bot_iot())), Error);
}
