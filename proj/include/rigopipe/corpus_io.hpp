#pragma once

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <zlib.h>
#include <nlohmann/json.hpp>

#include "rigopipe/common.hpp"
#include "rigopipe/document.hpp"

namespace rigopipe {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Byte streams (plain or gzip, selected by ".gz" suffix)

class ByteSource {
public:
    virtual ~ByteSource() = default;
    /// Reads up to n bytes; returns 0 only at end of stream.
    virtual std::size_t read(char* buf, std::size_t n) = 0;
};

class FileSource final : public ByteSource {
public:
    explicit FileSource(const fs::path& path) : in_(path, std::ios::binary) {
        if (!in_) throw DataError("cannot open file: " + path.string());
    }
    std::size_t read(char* buf, std::size_t n) override {
        in_.read(buf, static_cast<std::streamsize>(n));
        return static_cast<std::size_t>(in_.gcount());
    }

private:
    std::ifstream in_;
};

class GzipSource final : public ByteSource {
public:
    explicit GzipSource(const fs::path& path) : in_(path, std::ios::binary), path_(path.string()) {
        if (!in_) throw DataError("cannot open file: " + path_);
        std::memset(&strm_, 0, sizeof(strm_));
        // 15+32: accept gzip or zlib wrapping
        if (inflateInit2(&strm_, 15 + 32) != Z_OK) throw DataError("inflateInit failed: " + path_);
        inbuf_.resize(1 << 16);
    }
    ~GzipSource() override { inflateEnd(&strm_); }

    std::size_t read(char* buf, std::size_t n) override {
        if (done_) return 0;
        strm_.next_out = reinterpret_cast<Bytef*>(buf);
        strm_.avail_out = static_cast<uInt>(n);
        while (strm_.avail_out > 0) {
            if (strm_.avail_in == 0) {
                in_.read(inbuf_.data(), static_cast<std::streamsize>(inbuf_.size()));
                const auto got = static_cast<std::size_t>(in_.gcount());
                if (got == 0) {
                    if (strm_.avail_out == n) throw DataError("truncated gzip stream: " + path_);
                    break;
                }
                strm_.next_in = reinterpret_cast<Bytef*>(inbuf_.data());
                strm_.avail_in = static_cast<uInt>(got);
            }
            const int rc = inflate(&strm_, Z_NO_FLUSH);
            if (rc == Z_STREAM_END) {
                done_ = true;
                break;
            }
            if (rc != Z_OK) throw DataError("corrupt gzip stream: " + path_);
        }
        return n - strm_.avail_out;
    }

private:
    std::ifstream in_;
    std::string path_;
    z_stream strm_{};
    std::vector<char> inbuf_;
    bool done_ = false;
};

inline bool has_gz_suffix(const fs::path& path) {
    return path.extension() == ".gz";
}

inline std::unique_ptr<ByteSource> open_byte_source(const fs::path& path) {
    if (has_gz_suffix(path)) return std::make_unique<GzipSource>(path);
    return std::make_unique<FileSource>(path);
}

class ByteSink {
public:
    virtual ~ByteSink() = default;
    virtual void write(std::string_view bytes) = 0;
    virtual void close() = 0;
};

class FileSink final : public ByteSink {
public:
    explicit FileSink(const fs::path& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path.string()) {
        if (!out_) throw DataError("cannot write shard: " + path_);
    }
    void write(std::string_view bytes) override {
        out_.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out_) throw DataError("write failed: " + path_);
    }
    void close() override {
        out_.close();
        if (out_.fail()) throw DataError("close failed: " + path_);
    }

private:
    std::ofstream out_;
    std::string path_;
};

/// Gzip writer with a fixed header (mtime 0, OS byte 255) so equal payloads
/// produce byte-identical files on every run and platform.
class GzipSink final : public ByteSink {
public:
    explicit GzipSink(const fs::path& path) : out_(path, std::ios::binary | std::ios::trunc), path_(path.string()) {
        if (!out_) throw DataError("cannot write shard: " + path_);
        std::memset(&strm_, 0, sizeof(strm_));
        if (deflateInit2(&strm_, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8,
                         Z_DEFAULT_STRATEGY) != Z_OK)
            throw DataError("deflateInit failed: " + path_);
        std::memset(&header_, 0, sizeof(header_));
        header_.time = 0;
        header_.os = 255;
        deflateSetHeader(&strm_, &header_);
        outbuf_.resize(1 << 16);
    }
    ~GzipSink() override {
        if (!closed_) deflateEnd(&strm_);
    }

    void write(std::string_view bytes) override {
        strm_.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(bytes.data()));
        strm_.avail_in = static_cast<uInt>(bytes.size());
        pump(Z_NO_FLUSH);
    }

    void close() override {
        if (closed_) return;
        strm_.next_in = nullptr;
        strm_.avail_in = 0;
        pump(Z_FINISH);
        deflateEnd(&strm_);
        closed_ = true;
        out_.close();
        if (out_.fail()) throw DataError("close failed: " + path_);
    }

private:
    void pump(int flush) {
        do {
            strm_.next_out = reinterpret_cast<Bytef*>(outbuf_.data());
            strm_.avail_out = static_cast<uInt>(outbuf_.size());
            const int rc = deflate(&strm_, flush);
            if (rc == Z_STREAM_ERROR) throw DataError("deflate failed: " + path_);
            const std::size_t have = outbuf_.size() - strm_.avail_out;
            if (have > 0) {
                out_.write(outbuf_.data(), static_cast<std::streamsize>(have));
                if (!out_) throw DataError("write failed: " + path_);
            }
            if (rc == Z_STREAM_END) break;
        } while (strm_.avail_out == 0 || (flush == Z_FINISH));
    }

    std::ofstream out_;
    std::string path_;
    z_stream strm_{};
    gz_header header_{};
    std::vector<char> outbuf_;
    bool closed_ = false;
};

inline std::unique_ptr<ByteSink> open_byte_sink(const fs::path& path) {
    if (has_gz_suffix(path)) return std::make_unique<GzipSink>(path);
    return std::make_unique<FileSink>(path);
}

/// FNV-1a over a file's on-disk bytes.
inline std::uint64_t checksum_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path.string());
    Fnv1a64 h;
    char buf[1 << 16];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
        h.update(buf, static_cast<std::size_t>(in.gcount()));
    return h.digest();
}

// ---------------------------------------------------------------------------
// Line reading

/// Splits a byte stream into lines. A trailing '\r' is stripped; the final
/// line is yielded even without a newline.
class LineReader {
public:
    explicit LineReader(std::unique_ptr<ByteSource> src) : src_(std::move(src)) {}

    bool next_line(std::string& line) {
        line.clear();
        while (true) {
            if (pos_ < buf_.size()) {
                const std::size_t nl = buf_.find('\n', pos_);
                if (nl != std::string::npos) {
                    line.append(buf_, pos_, nl - pos_);
                    pos_ = nl + 1;
                    if (!line.empty() && line.back() == '\r') line.pop_back();
                    return true;
                }
                line.append(buf_, pos_, buf_.size() - pos_);
                pos_ = buf_.size();
            }
            buf_.resize(1 << 16);
            const std::size_t got = src_->read(buf_.data(), buf_.size());
            buf_.resize(got);
            pos_ = 0;
            if (got == 0) {
                // only an unterminated final line reaches here non-empty
                if (!line.empty() && line.back() == '\r') line.pop_back();
                return !line.empty();
            }
        }
    }

private:
    std::unique_ptr<ByteSource> src_;
    std::string buf_;
    std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Document (de)serialization

inline std::string document_to_json_line(const Document& doc) {
    nlohmann::ordered_json j;
    j["id"] = doc.id;
    j["text"] = doc.text;
    j["source"] = doc.source;
    if (!doc.url.empty()) j["url"] = doc.url;
    if (!doc.meta.empty()) j["meta"] = doc.meta;
    return j.dump();
}

inline Document parse_document_line(const std::string& line, const std::string& file,
                                    std::size_t lineno) {
    const std::size_t bad = utf8_find_invalid(line);
    if (bad != npos)
        throw DataError(file + ": invalid UTF-8 at byte " + std::to_string(bad) + " on line " +
                        std::to_string(lineno));
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(file + ": malformed JSON at line " + std::to_string(lineno) + ": " +
                        e.what());
    }
    if (!j.is_object())
        throw DataError(file + ": expected JSON object at line " + std::to_string(lineno));
    Document doc;
    if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty())
        throw DataError(file + ": missing field id at line " + std::to_string(lineno));
    if (!j.contains("text") || !j["text"].is_string())
        throw DataError(file + ": missing field text at line " + std::to_string(lineno));
    doc.id = j["id"].get<std::string>();
    doc.text = j["text"].get<std::string>();
    if (j.contains("source") && j["source"].is_string()) doc.source = j["source"].get<std::string>();
    if (j.contains("url") && j["url"].is_string()) doc.url = j["url"].get<std::string>();
    if (j.contains("meta")) {
        if (!j["meta"].is_object())
            throw DataError(file + ": meta must be an object at line " + std::to_string(lineno));
        for (const auto& [k, v] : j["meta"].items()) {
            if (!v.is_string())
                throw DataError(file + ": meta values must be strings at line " +
                                std::to_string(lineno));
            doc.meta[k] = v.get<std::string>();
        }
    }
    return doc;
}

enum class CorpusFormat { jsonl, plain };

inline CorpusFormat parse_corpus_format(std::string_view s) {
    if (s == "jsonl") return CorpusFormat::jsonl;
    if (s == "plain") return CorpusFormat::plain;
    throw ConfigError("unknown corpus format: " + std::string(s));
}

/// Streaming reader over one or more files. `plain` format yields one document
/// per non-blank line with id "<basename>#<lineno>" (1-based, counting blank
/// lines too so ids always match the source file).
class CorpusReader {
public:
    CorpusReader(std::vector<fs::path> files, CorpusFormat format)
        : files_(std::move(files)), format_(format) {
        for (const auto& f : files_)
            if (!fs::exists(f)) throw DataError("no such file: " + f.string());
    }

    static CorpusReader open(const fs::path& path, CorpusFormat format) {
        if (fs::is_directory(path)) {
            const fs::path manifest = path / "manifest.json";
            if (fs::exists(manifest)) {
                std::vector<fs::path> files;
                nlohmann::json j;
                try {
                    j = nlohmann::json::parse(read_file(manifest));
                } catch (const nlohmann::json::exception& e) {
                    throw DataError(manifest.string() + ": malformed manifest: " + e.what());
                }
                for (const auto& s : j.at("shards"))
                    files.push_back(path / s.at("path").get<std::string>());
                return CorpusReader(std::move(files), format);
            }
            std::vector<fs::path> files;
            for (const auto& entry : fs::directory_iterator(path))
                if (entry.is_regular_file()) files.push_back(entry.path());
            std::sort(files.begin(), files.end());
            if (files.empty()) throw DataError("empty corpus directory: " + path.string());
            return CorpusReader(std::move(files), format);
        }
        return CorpusReader({path}, format);
    }

    std::optional<Document> next() {
        std::string line;
        while (true) {
            if (!reader_) {
                if (file_idx_ >= files_.size()) return std::nullopt;
                current_file_ = files_[file_idx_].string();
                current_base_ = files_[file_idx_].filename().string();
                reader_ = std::make_unique<LineReader>(open_byte_source(files_[file_idx_]));
                ++file_idx_;
                lineno_ = 0;
            }
            if (!reader_->next_line(line)) {
                reader_.reset();
                continue;
            }
            ++lineno_;
            if (format_ == CorpusFormat::jsonl) {
                if (line.empty()) continue;
                return parse_document_line(line, current_file_, lineno_);
            }
            if (line.empty()) continue;
            const std::size_t bad = utf8_find_invalid(line);
            if (bad != npos)
                throw DataError(current_file_ + ": invalid UTF-8 at byte " + std::to_string(bad) +
                                " on line " + std::to_string(lineno_));
            Document doc;
            doc.id = current_base_ + "#" + std::to_string(lineno_);
            doc.text = line;
            return doc;
        }
    }

    std::vector<Document> read_all() {
        std::vector<Document> docs;
        while (auto doc = next()) docs.push_back(std::move(*doc));
        return docs;
    }

private:
    std::vector<fs::path> files_;
    CorpusFormat format_;
    std::size_t file_idx_ = 0;
    std::unique_ptr<LineReader> reader_;
    std::string current_file_;
    std::string current_base_;
    std::size_t lineno_ = 0;
};

// ---------------------------------------------------------------------------
// Sharded writing

struct ShardInfo {
    std::string path;  // relative to the manifest directory
    std::size_t documents = 0;
    std::uint64_t bytes = 0;  // on-disk size
    std::uint64_t checksum = 0;
};

struct ShardManifest {
    std::vector<ShardInfo> shards;
    std::size_t total_documents = 0;
    std::uint64_t total_bytes = 0;
    std::string checksum_algorithm = "fnv1a-64";
};

inline nlohmann::ordered_json manifest_to_json(const ShardManifest& m) {
    nlohmann::ordered_json j;
    j["checksum_algorithm"] = m.checksum_algorithm;
    j["total_documents"] = m.total_documents;
    j["total_bytes"] = m.total_bytes;
    j["shards"] = nlohmann::ordered_json::array();
    for (const auto& s : m.shards) {
        nlohmann::ordered_json js;
        js["path"] = s.path;
        js["documents"] = s.documents;
        js["bytes"] = s.bytes;
        js["checksum"] = format_hex64(s.checksum);
        j["shards"].push_back(std::move(js));
    }
    return j;
}

inline ShardManifest manifest_from_json(const nlohmann::json& j) {
    ShardManifest m;
    m.checksum_algorithm = j.at("checksum_algorithm").get<std::string>();
    m.total_documents = j.at("total_documents").get<std::size_t>();
    m.total_bytes = j.at("total_bytes").get<std::uint64_t>();
    for (const auto& js : j.at("shards")) {
        ShardInfo s;
        s.path = js.at("path").get<std::string>();
        s.documents = js.at("documents").get<std::size_t>();
        s.bytes = js.at("bytes").get<std::uint64_t>();
        s.checksum = parse_hex64(js.at("checksum").get<std::string>());
        m.shards.push_back(std::move(s));
    }
    return m;
}

inline ShardManifest load_manifest(const fs::path& dir) {
    const fs::path p = dir / "manifest.json";
    try {
        return manifest_from_json(nlohmann::json::parse(read_file(p)));
    } catch (const nlohmann::json::exception& e) {
        throw DataError(p.string() + ": malformed manifest: " + e.what());
    }
}

/// Writes documents into fixed-size JSONL shards plus a manifest.json.
/// Output is deterministic: same documents in the same order give
/// byte-identical shards (gzip headers are pinned).
class ShardWriter {
public:
    ShardWriter(fs::path dir, std::size_t shard_size, bool compress = true,
                std::string basename = "shard")
        : dir_(std::move(dir)), shard_size_(shard_size), compress_(compress),
          basename_(std::move(basename)) {
        if (shard_size_ == 0) throw ConfigError("shard_size must be positive");
        fs::create_directories(dir_);
    }

    void add(const Document& doc) {
        if (!sink_) open_shard();
        const std::string line = document_to_json_line(doc) + "\n";
        sink_->write(line);
        ++docs_in_shard_;
        if (docs_in_shard_ >= shard_size_) close_shard();
    }

    ShardManifest finish() {
        if (sink_) close_shard();
        ShardManifest m;
        m.shards = shards_;
        for (const auto& s : shards_) {
            m.total_documents += s.documents;
            m.total_bytes += s.bytes;
        }
        write_file(dir_ / "manifest.json", manifest_to_json(m).dump(2) + "\n");
        return m;
    }

private:
    void open_shard() {
        char name[64];
        std::snprintf(name, sizeof(name), "%s-%05zu.jsonl%s", basename_.c_str(), shards_.size(),
                      compress_ ? ".gz" : "");
        current_name_ = name;
        sink_ = open_byte_sink(dir_ / current_name_);
        docs_in_shard_ = 0;
    }

    void close_shard() {
        sink_->close();
        sink_.reset();
        ShardInfo info;
        info.path = current_name_;
        info.documents = docs_in_shard_;
        info.bytes = static_cast<std::uint64_t>(fs::file_size(dir_ / current_name_));
        info.checksum = checksum_file(dir_ / current_name_);
        shards_.push_back(std::move(info));
    }

    fs::path dir_;
    std::size_t shard_size_;
    bool compress_;
    std::string basename_;
    std::unique_ptr<ByteSink> sink_;
    std::string current_name_;
    std::size_t docs_in_shard_ = 0;
    std::vector<ShardInfo> shards_;
};

inline ShardManifest write_corpus(const std::vector<Document>& docs, const fs::path& dir,
                                  std::size_t shard_size, bool compress = true) {
    ShardWriter w(dir, shard_size, compress);
    for (const auto& d : docs) w.add(d);
    return w.finish();
}

/// Re-hashes every shard and compares against the manifest.
inline bool verify_manifest(const fs::path& dir, const ShardManifest& m) {
    for (const auto& s : m.shards)
        if (checksum_file(dir / s.path) != s.checksum) return false;
    return true;
}

}  // namespace rigopipe
