// Prompts, parsing, mock agents, the two-phase pipeline, configuration,
// and the file-level runner.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "maids/agents.hpp"
#include "maids/config.hpp"
#include "maids/pipeline.hpp"
#include "maids/runner.hpp"
#include "maids/synthetic.hpp"
#include "support.hpp"

using namespace maids;
namespace fs = std::filesystem;

namespace {

const ClassSet kClasses = ClassSet::bot_iot();

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("maids_pipe_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ExperienceEntry entry_with_rule(const std::string& text) {
    ExperienceEntry e;
    e.rule = RuleText::make(text, kClasses.at(1), kClasses.at(2));
    return e;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Agent that fails on chosen calls, for accounting tests.
class FlakyClassifier final : public ClassificationAgent {
public:
    explicit FlakyClassifier(int every) : every_(every) {}
    AgentVerdict classify(const Prompt&) override {
        if (++calls_ % every_ == 0) throw Error(ErrorCode::AgentUnavailable, "simulated outage");
        return {kClasses.at(calls_ % 4), "LABEL: " + kClasses.names()[calls_ % 4], ParseStatus::exact};
    }

private:
    int every_;
    int calls_ = 0;
};

class FlakyInducer final : public InductionAgent {
public:
    InducedRule induce_rule(const Prompt& p) override {
        if (++calls_ % 3 == 0) throw Error(ErrorCode::ResponseTimeout, "simulated timeout");
        if (calls_ % 3 == 1) return rule_from_response("free text with no structure", p.actual, p.predicted);
        return rule_from_response("IF in_pkts >= 3 THEN class=" + p.actual.name(), p.actual, p.predicted);
    }

private:
    int calls_ = 0;
};

RunConfig offline_config(const fs::path& dir) {
    RunConfig c;
    c.offline = true;
    c.embedder.dim = 128;
    c.curve_window = 50;
    c.checkpoint_interval = 40;
    c.workers = 3;
    c.out_dir = (dir / "out").string();
    c.library_path = (dir / "library.bin").string();
    c.manifest_path = (dir / "split.json").string();
    return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Prompts
// ---------------------------------------------------------------------------

TEST(Prompts, ClassificationRendering) {
    auto none = build_classification_prompt("{\"a\":1}", NoContext{}, kClasses);
    EXPECT_NE(none.user_text.find("No relevant past experience."), std::string::npos);
    EXPECT_EQ(none.user_text.rfind("{\"a\":1}", 0), 0u);
    EXPECT_NE(none.system_text.find("LABEL: <class>"), std::string::npos);
    EXPECT_NE(none.system_text.find("Reconnaissance"), std::string::npos);

    RetrievalHit hit{entry_with_rule("IF x >= 1 THEN class=DDoS"), 0.93};
    auto p = build_classification_prompt("{\"a\":1}", hit, kClasses);
    EXPECT_NE(p.user_text.find("IF x >= 1 THEN class=DDoS"), std::string::npos);
    EXPECT_NE(p.user_text.find("0.93"), std::string::npos);
    EXPECT_EQ(p.user_text, build_classification_prompt("{\"a\":1}", hit, kClasses).user_text);
    EXPECT_EQ(p.hash(), build_classification_prompt("{\"a\":1}", hit, kClasses).hash());

    RetrievalHit other{entry_with_rule("IF x >= 2 THEN class=DDoS"), 0.93};
    EXPECT_NE(p.user_text, build_classification_prompt("{\"a\":1}", other, kClasses).user_text);
    EXPECT_THROW(build_classification_prompt("{}", NoContext{}, ClassSet{}), Error);
}

TEST(Prompts, InductionRendering) {
    auto p = build_induction_prompt("{\"a\":1}", kClasses.at(2), kClasses.at(1), NoContext{});
    EXPECT_NE(p.user_text.find("predicted: DoS"), std::string::npos);
    EXPECT_NE(p.user_text.find("actual: DDoS"), std::string::npos);
    EXPECT_NE(p.user_text.find(kNoPriorRule), std::string::npos);
    EXPECT_NE(p.system_text.find("inter-arrival"), std::string::npos);

    RetrievalHit hit{entry_with_rule("IF y <= 4 THEN class=DDoS"), 0.7};
    auto q = build_induction_prompt("{\"a\":1}", kClasses.at(2), kClasses.at(1), hit);
    EXPECT_NE(q.user_text.find("Previous related experience: IF y <= 4 THEN class=DDoS"), std::string::npos);
    EXPECT_EQ(q.user_text, build_induction_prompt("{\"a\":1}", kClasses.at(2), kClasses.at(1), hit).user_text);
    EXPECT_THROW(build_induction_prompt("{}", kClasses.at(1), kClasses.at(1), NoContext{}), Error);
}

// ---------------------------------------------------------------------------
// Parsing and rules
// ---------------------------------------------------------------------------

TEST(ParseLabel, ThreeStages) {
    auto [a, sa] = parse_label("LABEL: Benign", kClasses);
    EXPECT_EQ(a, kClasses.at(0));
    EXPECT_EQ(sa, ParseStatus::exact);

    auto [b, sb] = parse_label("This looks like a reconnaissance sweep.", kClasses);
    EXPECT_EQ(b, kClasses.at(3));
    EXPECT_EQ(sb, ParseStatus::fuzzy);

    auto [c, sc] = parse_label("insufficient information", kClasses);
    EXPECT_TRUE(c.is_unknown());
    EXPECT_EQ(sc, ParseStatus::unparsed);

    auto [d, sd] = parse_label("LABEL: ddos\nHigh packet rate", kClasses);
    EXPECT_EQ(d, kClasses.at(1));
    EXPECT_EQ(sd, ParseStatus::exact);

    // Whole words only: "DoS" must not match inside "DDoS".
    auto [e, se] = parse_label("Probably DDoS, maybe DoS", kClasses);
    EXPECT_EQ(e, kClasses.at(1));
    EXPECT_EQ(se, ParseStatus::fuzzy);

    auto [f, sf] = parse_label("LABEL: UNKNOWN", kClasses);
    EXPECT_TRUE(f.is_unknown());
    EXPECT_EQ(sf, ParseStatus::exact);

    auto [g, sg] = parse_label(std::string(100, 'z'), kClasses);
    EXPECT_EQ(g.name().size(), 40u);
    EXPECT_EQ(sg, ParseStatus::unparsed);
}

TEST(ParseLabel, NeverFabricatesClasses) {
    std::mt19937_64 rng(9);
    const std::vector<std::string> words = {"LABEL:", "dos", "benign", "x", "\n", "DDoS-like", "recon", "Theft"};
    for (int i = 0; i < 500; ++i) {
        std::string raw;
        for (int w = 0; w < 6; ++w) raw += words[rng() % words.size()] + " ";
        auto [label, status] = parse_label(raw, kClasses);
        EXPECT_TRUE(label.is_unknown() || kClasses.contains(label));
        if (label.is_unknown() && status != ParseStatus::exact) {
            EXPECT_EQ(status, ParseStatus::unparsed);
        }
    }
}

TEST(Rules, TemplateWrappingAndTruncation) {
    auto ok = rule_from_response("Analysis...\nIF in_bytes >= 5 THEN class=DDoS; previously misclassified as DoS",
                                 kClasses.at(1), kClasses.at(2));
    EXPECT_EQ(ok.parse_status, ParseStatus::exact);
    EXPECT_EQ(ok.rule.text.rfind("IF in_bytes", 0), 0u);

    auto wrapped = rule_from_response("just prose", kClasses.at(1), kClasses.at(2));
    EXPECT_EQ(wrapped.parse_status, ParseStatus::unparsed);
    EXPECT_NE(wrapped.rule.text.find("just prose"), std::string::npos);
    EXPECT_NE(wrapped.rule.text.find("THEN class=DDoS"), std::string::npos);

    auto longer = rule_from_response("IF a THEN class=DDoS " + std::string(2000, 'q'), kClasses.at(1), kClasses.at(2));
    EXPECT_EQ(longer.rule.text.size(), kMaxRuleChars);
    EXPECT_TRUE(longer.rule.text.ends_with(kTruncationMarker));
    EXPECT_THROW(RuleText::make("", kClasses.at(0), kClasses.at(1)), Error);
}

// ---------------------------------------------------------------------------
// Mock agents
// ---------------------------------------------------------------------------

TEST(MockAgents, ColdStartEmitsUnknown) {
    auto embedder = std::make_shared<HashEmbedder>(64);
    auto state = std::make_shared<MockAgentState>(kClasses, 64);
    MockClassifier clf(state, embedder);
    auto v = clf.classify(build_classification_prompt("{\"in_bytes\":1}", NoContext{}, kClasses));
    EXPECT_TRUE(v.label.is_unknown());
    EXPECT_EQ(v.parse_status, ParseStatus::exact);
    EXPECT_EQ(v.raw_text.rfind("LABEL: UNKNOWN", 0), 0u);
}

TEST(MockAgents, CentroidMatchesBatchMean) {
    std::mt19937_64 rng(21);
    MockAgentState state(kClasses, 32);
    std::vector<double> sum(32, 0.0);
    FlowRecord r;
    for (int i = 0; i < 100; ++i) {
        auto v = oracle::random_unit(rng, 32);
        for (std::size_t d = 0; d < 32; ++d) sum[d] += v[d];
        state.observe(FlowEmbedding::from_stored(v), r, kClasses.at(2));
        if (i == 0) {
            for (std::size_t d = 0; d < 32; ++d) EXPECT_NEAR(state.centroid(2)[d], v[d], 1e-7);
        }
    }
    for (std::size_t d = 0; d < 32; ++d) EXPECT_NEAR(state.centroid(2)[d], sum[d] / 100, 1e-6);
    EXPECT_EQ(state.count(2), 100u);
    EXPECT_EQ(state.count(0), 0u);
}

TEST(MockAgents, NearestCentroidAgreesWithIndependentComputation) {
    auto embedder = std::make_shared<HashEmbedder>(128);
    auto state = std::make_shared<MockAgentState>(kClasses, 128);
    auto flows = synthetic_flows(kClasses, {60, 3, 17});
    std::vector<std::vector<double>> sums(4, std::vector<double>(128, 0.0));
    std::vector<int> counts(4, 0);
    for (auto& f : flows) {
        auto e = embedder->embed(to_canonical_json(f.record));
        state->observe(e, f.record, f.label);
        auto c = *kClasses.index_of(f.label);
        ++counts[c];
        for (std::size_t d = 0; d < 128; ++d) sums[c][d] += e.values()[d];
    }
    MockClassifier clf(state, embedder);
    for (auto& f : synthetic_flows(kClasses, {40, 3, 18})) {
        auto json = to_canonical_json(f.record);
        auto q = embedder->embed(json);
        std::size_t best = 0;
        double best_sim = -2;
        for (std::size_t c = 0; c < 4; ++c) {
            if (!counts[c]) continue;
            double dot = 0, norm = 0;
            for (std::size_t d = 0; d < 128; ++d) {
                const double m = sums[c][d] / counts[c];
                dot += q.values()[d] * m;
                norm += m * m;
            }
            if (dot / std::sqrt(norm) > best_sim) {
                best_sim = dot / std::sqrt(norm);
                best = c;
            }
        }
        auto v = clf.classify(build_classification_prompt(json, NoContext{}, kClasses));
        EXPECT_EQ(v.label, kClasses.at(best));
    }
}

TEST(MockAgents, FollowsRetrievedRuleForKnownClass) {
    auto embedder = std::make_shared<HashEmbedder>(64);
    auto state = std::make_shared<MockAgentState>(kClasses, 64);
    MockClassifier clf(state, embedder);
    RetrievalHit hit{entry_with_rule("IF a >= 1 THEN class=DoS; previously misclassified as Benign"), 0.8};
    auto v = clf.classify(build_classification_prompt("{\"x\":1}", hit, kClasses));
    EXPECT_EQ(v.label, kClasses.at(2));
    RetrievalHit noise{entry_with_rule("IF a >= 1 THEN class=Noise"), 0.8};
    EXPECT_TRUE(clf.classify(build_classification_prompt("{\"x\":1}", noise, kClasses)).label.is_unknown());
}

TEST(MockAgents, InducerPicksTopTwoZScores) {
    auto state = std::make_shared<MockAgentState>(kClasses, 8);
    std::mt19937_64 rng(5);
    for (int i = 0; i < 30; ++i) {
        FlowRecord r;
        r.dst_port = 80;
        r.in_bytes = 1000 + rng() % 100;
        r.out_bytes = 500 + rng() % 50;
        r.in_pkts = 10 + rng() % 3;
        r.flow_duration_ms = 100 + rng() % 10;
        r.avg_iat_src_to_dst = 1.0 + (rng() % 10) / 10.0;
        state->observe(hash_embed("k" + std::to_string(i), 8), r, kClasses.at(1));
    }
    FlowRecord odd;
    odd.dst_port = 80;
    odd.in_bytes = 1050;
    odd.out_bytes = 520;
    odd.in_pkts = 11;
    odd.flow_duration_ms = 5000;   // far above the class mean
    odd.avg_iat_src_to_dst = 40.0;  // far above too
    auto top = top_z_features(*state, 1, odd);

    // Independent recomputation from population statistics.
    std::vector<std::pair<double, std::size_t>> ranked;
    auto x = odd.numeric_features();
    for (std::size_t f = 0; f < x.size(); ++f) {
        const double var = state->feature_variance(1, f);
        ranked.push_back({-std::fabs((x[f] - state->feature_mean(1, f)) / (var > 0 ? std::sqrt(var) : 1.0)), f});
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](auto& a, auto& b) { return a.first < b.first; });
    ASSERT_EQ(top.size(), 2u);
    EXPECT_EQ(top[0].first, ranked[0].second);
    EXPECT_EQ(top[1].first, ranked[1].second);

    MockInducer inducer(state);
    auto rule = inducer.induce_rule(build_induction_prompt(to_canonical_json(odd), kClasses.at(0), kClasses.at(1), NoContext{}));
    EXPECT_EQ(rule.rule.text.rfind("IF ", 0), 0u);
    EXPECT_NE(rule.rule.text.find("THEN class=DDoS; previously misclassified as Benign"), std::string::npos);
    EXPECT_NE(rule.rule.text.find(std::string(kNumericFeatureNames[top[0].first])), std::string::npos);
    EXPECT_EQ(rule.rule.target_class, kClasses.at(1));
    EXPECT_EQ(rule.rule.confused_with, kClasses.at(0));

    Prompt bad = build_induction_prompt("{}", kClasses.at(0), kClasses.at(1), NoContext{});
    bad.predicted = bad.actual;
    EXPECT_THROW(inducer.induce_rule(bad), Error);
}

TEST(MockAgents, StateRoundTripsThroughJson) {
    MockAgentState s(kClasses, 16);
    FlowRecord r;
    r.in_bytes = 7;
    s.observe(hash_embed("a b c", 16), r, kClasses.at(3));
    auto back = MockAgentState::from_json(s.to_json());
    EXPECT_EQ(back.to_json(), s.to_json());
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

TEST(Pipeline, CausalityBetweenNearDuplicates) {
    RunConfig c;
    c.embedder.dim = 384;
    c.mode = AblationMode::full;
    auto embedder = std::make_shared<HashEmbedder>(384);
    auto state = std::make_shared<MockAgentState>(kClasses, 384);
    MockClassifier clf(state, embedder);
    MockInducer ind(state);
    ExperienceLibrary lib(384);

    LabeledFlow a;
    a.record.src_ip = "10.1.1.1";
    a.record.in_bytes = 5000;
    a.record.protocol = "UDP";
    a.label = kClasses.at(1);
    a.flow_id = 0;
    LabeledFlow b = a;
    b.record.in_bytes = 5001;
    b.flow_id = 1;
    std::vector<LabeledFlow> flows = {a, b};
    auto report = run_build(c, flows, *embedder, {&clf, &ind, state.get()}, &lib);
    ASSERT_EQ(report.outcomes.size(), 2u);
    EXPECT_FALSE(report.outcomes[0].hit_entry_id);
    ASSERT_TRUE(report.outcomes[0].induced_rule_id);
    ASSERT_TRUE(report.outcomes[1].hit_entry_id);
    EXPECT_EQ(*report.outcomes[1].hit_entry_id, *report.outcomes[0].induced_rule_id);
    EXPECT_GE(*report.outcomes[1].hit_similarity, c.tau);
    EXPECT_TRUE(report.outcomes[1].correct());
}

TEST(Pipeline, AccountingWithFailingAgents) {
    RunConfig c;
    c.embedder.dim = 64;
    c.curve_window = 10;
    auto embedder = std::make_shared<HashEmbedder>(64);
    FlakyClassifier clf(5);
    FlakyInducer ind;
    ExperienceLibrary lib(64);
    auto flows = synthetic_flows(kClasses, {100, 5, 1});
    std::stringstream transcript_out;
    TranscriptWriter transcript(transcript_out);
    BuildOptions opts;
    opts.transcript = &transcript;
    auto r = run_build(c, flows, *embedder, {&clf, &ind, nullptr}, &lib, std::move(opts));

    EXPECT_EQ(r.tallies.classified + r.tallies.errored, flows.size());
    EXPECT_EQ(r.tallies.errored, 20u);
    std::uint64_t with_rule = 0;
    for (auto& o : r.outcomes) {
        if (o.induced_rule_id) ++with_rule;
        if (!o.classified()) {
            EXPECT_TRUE(o.error.has_value());
            EXPECT_EQ(o.induction, "none");
        }
    }
    EXPECT_EQ(r.library_after - r.library_before, with_rule);
    EXPECT_EQ(lib.stats(kClasses).total, with_rule);
    EXPECT_GT(r.tallies.induction_failures, 0u);
    EXPECT_GT(r.tallies.induction_unparsed, 0u);
    EXPECT_EQ(r.tallies.inductions, with_rule);

    std::string line;
    std::size_t lines = 0;
    while (std::getline(transcript_out, line)) {
        auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("prompt_hash"));
        ++lines;
    }
    EXPECT_EQ(lines, flows.size() + r.tallies.inductions + r.tallies.induction_failures);
}

TEST(Pipeline, ModeValidation) {
    RunConfig c;
    c.embedder.dim = 16;
    auto embedder = std::make_shared<HashEmbedder>(16);
    auto state = std::make_shared<MockAgentState>(kClasses, 16);
    MockClassifier clf(state, embedder);
    MockInducer ind(state);
    ExperienceLibrary lib(16);
    std::vector<LabeledFlow> none;

    c.mode = AblationMode::zero_shot;
    EXPECT_THROW(run_build(c, none, *embedder, {&clf, nullptr, nullptr}, &lib), Error);
    c.mode = AblationMode::full;
    EXPECT_THROW(run_build(c, none, *embedder, {&clf, nullptr, nullptr}, &lib), Error);
    lib.set_read_only();
    try {
        run_build(c, none, *embedder, {&clf, &ind, nullptr}, &lib);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ReadOnlyLibrary);
    }
    ExperienceLibrary wrong_dim(8);
    EXPECT_THROW(run_build(c, none, *embedder, {&clf, &ind, nullptr}, &wrong_dim), Error);
    c.mode = AblationMode::full;
    EXPECT_THROW(run_evaluate(c, none, *embedder, clf, &lib), Error);
}

TEST(Pipeline, ParallelEvaluationMatchesSequential) {
    auto embedder = std::make_shared<HashEmbedder>(96);
    auto flows = synthetic_flows(kClasses, {400, 10, 4});
    RunConfig c;
    c.embedder.dim = 96;
    auto state = std::make_shared<MockAgentState>(kClasses, 96);
    MockClassifier clf(state, embedder);
    MockInducer ind(state);
    ExperienceLibrary lib(96);
    run_build(c, std::span(flows).first(300), *embedder, {&clf, &ind, state.get()}, &lib);
    lib.set_read_only();
    const auto checksum = lib.content_checksum();

    c.mode = AblationMode::library_only;
    auto frozen_state = std::make_shared<MockAgentState>(kClasses, 96);
    frozen_state->prime_from_library(lib);
    MockClassifier frozen(frozen_state, embedder);
    auto eval_flows = std::span(flows).subspan(300);
    c.workers = 1;
    std::stringstream t1, t4;
    TranscriptWriter w1(t1), w4(t4);
    auto seq = run_evaluate(c, eval_flows, *embedder, frozen, &lib, &w1);
    c.workers = 4;
    auto par = run_evaluate(c, eval_flows, *embedder, frozen, &lib, &w4);
    auto js = seq.to_json(), jp = par.to_json();
    for (auto key : {"outcomes", "metrics", "confusion", "learning_curve", "tallies"}) EXPECT_EQ(js[key], jp[key]) << key;
    EXPECT_EQ(t1.str(), t4.str());
    EXPECT_EQ(lib.content_checksum(), checksum);
    EXPECT_EQ(seq.library_before, seq.library_after);
    for (auto& o : par.outcomes) EXPECT_FALSE(o.induced_rule_id);
}

TEST(Pipeline, ComparisonTableShape) {
    std::vector<ComparisonRow> rows = {{"Zero-shot", 0.1, 0.2, 0.3, 0.25}, {"Full", 0.9, 0.8, 0.85, 0.825}};
    auto table = render_comparison_table(rows);
    EXPECT_NE(table.find("Accuracy"), std::string::npos);
    EXPECT_NE(table.find("82.50"), std::string::npos);
    EXPECT_EQ(std::count(table.begin(), table.end(), '\n'), 4);
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

TEST(Config, DefaultsAndValidation) {
    RunConfig c;
    EXPECT_EQ(c.tau, 0.5);
    EXPECT_EQ(c.embedder.dim, 384u);
    EXPECT_EQ(c.agent.temperature, 0.0);
    EXPECT_EQ(c.agent.model_name, "gpt-4o");
    EXPECT_EQ(c.quota_build, 50000u);
    EXPECT_EQ(c.quota_eval, 20000u);
    EXPECT_NO_THROW(c.validate());
    c.tau = 1.2;
    EXPECT_THROW(c.validate(), Error);
    c.tau = 0.5;
    c.top_k = 3;
    EXPECT_THROW(c.validate(), Error);
    c.top_k = 1;
    c.agent.temperature = 0.7;
    EXPECT_THROW(c.validate(), Error);
}

TEST(Config, FileThenEnvThenFlags) {
    auto dir = temp_dir("config");
    std::ofstream(dir / "c.json") << R"({"tau": 0.7, "seed": 3, "classes": ["A","B"],
        "embedder": {"dim": 64, "api_key_env": "MY_KEY"}, "paths": {"library": "lib.bin"}})";
    auto c = RunConfig::from_file((dir / "c.json").string());
    EXPECT_EQ(c.tau, 0.7);
    EXPECT_EQ(c.seed, 3u);
    EXPECT_EQ(c.classes.size(), 2u);
    EXPECT_EQ(c.embedder.dim, 64u);
    EXPECT_EQ(c.library_path, "lib.bin");
    ::setenv("MAIDS_TAU", "0.25", 1);
    c.merge_env();
    ::unsetenv("MAIDS_TAU");
    EXPECT_EQ(c.tau, 0.25);
    EXPECT_EQ(c.to_json()["embedder"]["api_key_env"], "MY_KEY");
    EXPECT_NE(c.hash(), RunConfig{}.hash());
    std::ofstream(dir / "bad.json") << "{";
    EXPECT_THROW(RunConfig::from_file((dir / "bad.json").string()), Error);
    fs::remove_all(dir);
}

TEST(Config, SecretsNeverReachArtifacts) {
    auto dir = temp_dir("secret");
    ::setenv("MAIDS_TEST_SECRET", "sk-live-DO-NOT-LEAK-1234", 1);
    auto c = offline_config(dir);
    c.embedder.api_key_env = "MAIDS_TEST_SECRET";
    c.agent.api_key_env = "MAIDS_TEST_SECRET";
    auto flows = synthetic_flows(kClasses, {120, 5, 3});
    build_with_checkpoints(c, flows);
    for (auto& entry : fs::recursive_directory_iterator(dir))
        if (entry.is_regular_file()) {
            EXPECT_EQ(slurp(entry.path()).find("sk-live-DO-NOT-LEAK-1234"), std::string::npos) << entry.path();
        }
    ::unsetenv("MAIDS_TEST_SECRET");
    fs::remove_all(dir);
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

TEST(Runner, ResumeFromCheckpointMatchesUninterruptedRun) {
    auto dir = temp_dir("resume");
    auto c = offline_config(dir);
    auto flows = synthetic_flows(kClasses, {200, 8, 6});

    auto full = build_with_checkpoints(c, flows);
    const auto full_report = slurp(OutputPaths{c.out_dir}.build_report());
    const auto full_library = slurp(c.library_path);
    const auto full_transcript = slurp(OutputPaths{c.out_dir}.build_transcript());

    // Crash right after the second checkpoint, then resume.
    fs::remove_all(dir);
    fs::create_directories(dir);
    EXPECT_THROW(build_with_checkpoints(c, flows, false,
                                        [](std::size_t done) {
                                            if (done == 80) throw std::runtime_error("simulated crash");
                                        }),
                 std::runtime_error);
    ASSERT_TRUE(fs::exists(OutputPaths{c.out_dir}.checkpoint()));
    auto resumed = build_with_checkpoints(c, flows, true);
    EXPECT_EQ(resumed.resumed_from, 80u);
    EXPECT_EQ(slurp(OutputPaths{c.out_dir}.build_report()), full_report);
    EXPECT_EQ(slurp(c.library_path), full_library);
    EXPECT_EQ(slurp(OutputPaths{c.out_dir}.build_transcript()), full_transcript);
    EXPECT_FALSE(fs::exists(OutputPaths{c.out_dir}.checkpoint()));
    (void)full;
    fs::remove_all(dir);
}

TEST(Runner, SplitManifestIsReused) {
    auto dir = temp_dir("split");
    auto c = offline_config(dir);
    c.dataset_path = (dir / "d.csv").string();
    c.quota_build = 80;
    c.quota_eval = 40;
    {
        std::ofstream out(c.dataset_path);
        write_flow_csv(out, synthetic_flows(kClasses, {300, 5, 2}));
    }
    auto first = prepare_split(c);
    EXPECT_FALSE(first.from_manifest);
    EXPECT_TRUE(fs::exists(c.manifest_path));
    c.seed = 999;  // ignored while the manifest exists
    auto second = prepare_split(c);
    EXPECT_TRUE(second.from_manifest);
    EXPECT_EQ(second.split.manifest(), first.split.manifest());
    auto resampled = prepare_split(c, true);
    EXPECT_NE(resampled.split.manifest(), first.split.manifest());
    fs::remove_all(dir);
}

TEST(Runner, AblationLeavesLibraryUntouched) {
    auto dir = temp_dir("ablate");
    auto c = offline_config(dir);
    auto flows = synthetic_flows(kClasses, {500, 10, 8});
    build_with_checkpoints(c, std::span(flows).first(350));
    const auto before = slurp(c.library_path);
    auto r = ablate(c, std::span(flows).subspan(350));
    EXPECT_EQ(slurp(c.library_path), before);
    ASSERT_TRUE(r.library_only.metrics && r.full.metrics);
    EXPECT_GT(r.library_only.metrics->macro_f1, (r.zero_shot.metrics ? r.zero_shot.metrics->macro_f1 : 0.0) + 0.3);
    EXPECT_GE(r.full.library_after, r.full.library_before);
    EXPECT_TRUE(fs::exists(OutputPaths{c.out_dir}.ablation_table()));
    auto summary = render_report_summary(read_json_file(OutputPaths{c.out_dir}.ablation_report()));
    EXPECT_NE(summary.find("Library only"), std::string::npos);
    fs::remove_all(dir);
}

TEST(Runner, ReportComparisonMatchesGolden) {
    const fs::path dir = MAIDS_FIXTURE_DIR;
    std::vector<fs::path> inputs = {dir / "eval_zero.json", dir / "eval_lib.json"};
    EXPECT_EQ(render_report_comparison(inputs), slurp(dir / "report_comparison.golden.txt"));
}

TEST(Pipeline, EmptyBuildSetLeavesLibraryAlone) {
    RunConfig c;
    c.embedder.dim = 16;
    auto embedder = std::make_shared<HashEmbedder>(16);
    auto state = std::make_shared<MockAgentState>(kClasses, 16);
    MockClassifier clf(state, embedder);
    MockInducer ind(state);
    ExperienceLibrary lib(16);
    lib.insert(oracle::make_fields(hash_embed("seed entry", 16), kClasses, 1, 2));
    const auto sum = lib.content_checksum();
    std::vector<LabeledFlow> none;
    auto r = run_build(c, none, *embedder, {&clf, &ind, state.get()}, &lib);
    EXPECT_TRUE(r.outcomes.empty());
    EXPECT_TRUE(r.curve.empty());
    EXPECT_FALSE(r.metrics.has_value());
    EXPECT_EQ(r.library_before, 1u);
    EXPECT_EQ(r.library_after, 1u);
    EXPECT_EQ(lib.content_checksum(), sum);
}

TEST(Pipeline, RuleCountEqualsReplayedMisclassifications) {
    RunConfig c;
    c.embedder.dim = 384;
    c.curve_window = 100;
    auto embedder = std::make_shared<HashEmbedder>(384);
    auto state = std::make_shared<MockAgentState>(kClasses, 384);
    MockClassifier clf(state, embedder);
    MockInducer ind(state);
    ExperienceLibrary lib(384);
    auto flows = synthetic_flows(kClasses, {500, 20, 7});
    auto r = run_build(c, flows, *embedder, {&clf, &ind, state.get()}, &lib);

    // Replay the trace: every wrong verdict, and only those, left a rule
    // keyed by that flow's embedding.
    std::size_t wrong = 0;
    auto entries = lib.entries();
    for (auto& o : r.outcomes) {
        const bool is_wrong = !o.predicted || *o.predicted != o.truth;
        if (!is_wrong) {
            EXPECT_FALSE(o.induced_rule_id);
            continue;
        }
        ASSERT_TRUE(o.induced_rule_id);
        const auto& e = entries.at(wrong);
        EXPECT_EQ(e.entry_id, *o.induced_rule_id);
        EXPECT_EQ(e.source_flow_id, o.flow_id);
        EXPECT_EQ(e.actual, o.truth);
        EXPECT_EQ(e.key, embedder->embed(to_canonical_json(flows[static_cast<std::size_t>(o.flow_id)].record)));
        ++wrong;
    }
    EXPECT_EQ(lib.size(), wrong);
    ASSERT_EQ(r.curve.size(), 5u);
    EXPECT_GT(r.curve.back().window_macro_f1, r.curve.front().window_macro_f1);
}

TEST(Pipeline, EvaluationIsRepeatable) {
    auto dir = temp_dir("eval_twice");
    auto c = offline_config(dir);
    auto flows = synthetic_flows(kClasses, {400, 8, 12});
    build_with_checkpoints(c, std::span(flows).first(300));
    c.mode = AblationMode::library_only;
    std::string first[2], second[2];
    for (auto* dst : {first, second}) {
        evaluate_frozen(c, std::span(flows).subspan(300));
        dst[0] = slurp(OutputPaths{c.out_dir}.eval_report());
        dst[1] = slurp(OutputPaths{c.out_dir}.eval_transcript());
    }
    EXPECT_EQ(first[0], second[0]);
    EXPECT_EQ(first[1], second[1]);
    fs::remove_all(dir);
}

TEST(Pipeline, AblationArmsShareFlowSequence) {
    auto dir = temp_dir("ablate_ids");
    auto c = offline_config(dir);
    auto flows = synthetic_flows(kClasses, {300, 8, 13});
    build_with_checkpoints(c, std::span(flows).first(200));
    auto r = ablate(c, std::span(flows).subspan(200));
    auto ids = [](const RunReport& rep) {
        std::vector<std::int64_t> v;
        for (auto& o : rep.outcomes) v.push_back(o.flow_id);
        return v;
    };
    EXPECT_EQ(ids(r.zero_shot), ids(r.library_only));
    EXPECT_EQ(ids(r.zero_shot), ids(r.full));
    EXPECT_EQ(ids(r.zero_shot).size(), 100u);
    EXPECT_EQ(r.split_hash, flow_sequence_hash(std::span(flows).subspan(200)));
    fs::remove_all(dir);
}
