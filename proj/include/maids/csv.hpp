#pragma once

#include <cstdint>
#include <fstream>
#include <istream>
#include <memory>
#include <optional>
#include <streambuf>
#include <string>
#include <vector>

#include <zlib.h>

#include "maids/error.hpp"

namespace maids {

/// Read-only streambuf over a gzip file.
class GzipStreamBuf : public std::streambuf {
public:
    explicit GzipStreamBuf(const std::string& path) : file_(gzopen(path.c_str(), "rb")) {
        if (!file_) throw Error(ErrorCode::Io, "cannot open gzip file: " + path);
        gzbuffer(file_, 1 << 17);
    }
    ~GzipStreamBuf() override {
        if (file_) gzclose(file_);
    }
    GzipStreamBuf(const GzipStreamBuf&) = delete;
    GzipStreamBuf& operator=(const GzipStreamBuf&) = delete;

protected:
    int_type underflow() override {
        if (gptr() < egptr()) return traits_type::to_int_type(*gptr());
        int n = gzread(file_, buf_, sizeof buf_);
        if (n < 0) throw Error(ErrorCode::Io, "gzip read failed");
        if (n == 0) return traits_type::eof();
        setg(buf_, buf_, buf_ + n);
        return traits_type::to_int_type(*gptr());
    }

private:
    gzFile file_;
    char buf_[1 << 16];
};

/// Owns the underlying stream for file inputs; ".gz" selects decompression.
class InputFile {
public:
    explicit InputFile(const std::string& path) {
        if (path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0) {
            gz_ = std::make_unique<GzipStreamBuf>(path);
            stream_ = std::make_unique<std::istream>(gz_.get());
        } else {
            auto f = std::make_unique<std::ifstream>(path, std::ios::binary);
            if (!*f) throw Error(ErrorCode::Io, "cannot open file: " + path);
            stream_ = std::move(f);
        }
    }
    std::istream& stream() { return *stream_; }

private:
    std::unique_ptr<GzipStreamBuf> gz_;
    std::unique_ptr<std::istream> stream_;
};

/// One parsed CSV record with the physical line it started on.
struct CsvRecord {
    std::vector<std::string> fields;
    std::int64_t line_number = 0;
};

/// RFC-4180 record reader: quoted fields may hold commas, doubled quotes,
/// and line breaks. CRLF and LF both end a record. Blank lines are skipped.
class CsvRecordReader {
public:
    explicit CsvRecordReader(std::istream& in) : in_(in) {}

    std::optional<CsvRecord> next() {
        CsvRecord rec;
        while (true) {
            int c = in_.peek();
            if (c == std::char_traits<char>::eof()) return std::nullopt;
            if (c == '\n') {
                in_.get();
                ++line_;
                continue;
            }
            if (c == '\r') {
                in_.get();
                if (in_.peek() == '\n') in_.get();
                ++line_;
                continue;
            }
            break;
        }
        rec.line_number = line_;
        std::string field;
        bool quoted = false;
        bool field_started_quoted = false;
        while (true) {
            int c = in_.get();
            if (c == std::char_traits<char>::eof()) {
                if (quoted) throw Error(ErrorCode::RaggedRow, "unterminated quoted field", rec.line_number);
                rec.fields.push_back(std::move(field));
                ++line_;
                return rec;
            }
            char ch = static_cast<char>(c);
            if (quoted) {
                if (ch == '"') {
                    if (in_.peek() == '"') {
                        in_.get();
                        field.push_back('"');
                    } else {
                        quoted = false;
                    }
                } else {
                    if (ch == '\n') ++line_;
                    field.push_back(ch);
                }
                continue;
            }
            if (ch == '"' && field.empty() && !field_started_quoted) {
                quoted = true;
                field_started_quoted = true;
            } else if (ch == ',') {
                rec.fields.push_back(std::move(field));
                field.clear();
                field_started_quoted = false;
            } else if (ch == '\n' || ch == '\r') {
                if (ch == '\r' && in_.peek() == '\n') in_.get();
                rec.fields.push_back(std::move(field));
                ++line_;
                return rec;
            } else {
                field.push_back(ch);
            }
        }
    }

private:
    std::istream& in_;
    std::int64_t line_ = 1;
};

inline std::string csv_escape(const std::string& v) {
    if (v.find_first_of(",\"\r\n") == std::string::npos) return v;
    std::string out = "\"";
    for (char c : v) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace maids
