#include "amcr/io.hpp"

#include <httplib.h>

#include "amcr/numerics.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

namespace amcr {

namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kMaxSide = 1 << 16;       // grid rows/cols
constexpr std::int64_t kMaxEntries = 1 << 20;    // container entry counts
constexpr std::int64_t kMaxStringLen = 1 << 16;  // token labels

class BinWriter {
public:
    explicit BinWriter(const fs::path& path)
        : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw IoError("cannot open for writing: " + path.string());
    }

    void magic(const char* m) { out_.write(m, 8); }

    void i64(std::int64_t v) {
        const auto u = static_cast<std::uint64_t>(v);
        unsigned char buf[8];
        for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(u >> (8 * i));
        out_.write(reinterpret_cast<const char*>(buf), 8);
    }

    void f64(double d) { i64(static_cast<std::int64_t>(std::bit_cast<std::uint64_t>(d))); }

    void grid(const GridD& g) {
        // GridD is row-major, so storage order is the documented order.
        for (Eigen::Index i = 0; i < g.size(); ++i) f64(g.data()[i]);
    }

    void matrix(const MatrixXd& m) {
        for (Eigen::Index r = 0; r < m.rows(); ++r)
            for (Eigen::Index c = 0; c < m.cols(); ++c) f64(m(r, c));
    }

    void str(const std::string& s) {
        i64(static_cast<std::int64_t>(s.size()));
        out_.write(s.data(), static_cast<std::streamsize>(s.size()));
    }

    void close() {
        out_.flush();
        if (!out_) throw IoError("write failed: " + path_.string());
        out_.close();
    }

private:
    fs::path path_;
    std::ofstream out_;
};

class BinReader {
public:
    explicit BinReader(const fs::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!fs::exists(path)) throw IoError("no such file: " + path.string());
        if (!in_) throw IoError("cannot open: " + path.string());
    }

    void expect_magic(const char* m) {
        char buf[8];
        read(buf, 8, "magic");
        if (std::memcmp(buf, m, 8) != 0)
            throw IoError(path_.string() + ": bad magic, expected " + std::string(m, 8));
    }

    std::int64_t i64(const char* what) {
        unsigned char buf[8];
        read(reinterpret_cast<char*>(buf), 8, what);
        std::uint64_t u = 0;
        for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
        return static_cast<std::int64_t>(u);
    }

    std::int64_t ranged(const char* what, std::int64_t lo, std::int64_t hi) {
        const auto v = i64(what);
        if (v < lo || v > hi)
            throw ValidationError(path_.string() + ": " + what + " out of range (" +
                                  std::to_string(v) + ")");
        return v;
    }

    double f64(const char* what) {
        return std::bit_cast<double>(static_cast<std::uint64_t>(i64(what)));
    }

    GridD grid(Eigen::Index rows, Eigen::Index cols, const char* what) {
        GridD g(rows, cols);
        for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = f64(what);
        return g;
    }

    MatrixXd matrix(Eigen::Index rows, Eigen::Index cols, const char* what) {
        MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = f64(what);
        return m;
    }

    std::string str(const char* what) {
        const auto len = ranged(what, 0, kMaxStringLen);
        std::string s(static_cast<std::size_t>(len), '\0');
        read(s.data(), static_cast<std::streamsize>(len), what);
        return s;
    }

    void expect_eof() {
        char c;
        in_.read(&c, 1);
        if (in_.gcount() != 0)
            throw ValidationError(path_.string() + ": trailing bytes after payload");
    }

    const fs::path& path() const { return path_; }

private:
    void read(char* dst, std::streamsize n, const char* what) {
        in_.read(dst, n);
        if (in_.gcount() != n)
            throw ValidationError(path_.string() + ": truncated (" + what + ")");
    }

    fs::path path_;
    std::ifstream in_;
};

LatentState read_latent_entry(BinReader& in) {
    LatentState z;
    z.step = static_cast<int>(in.ranged("step", 0, 1 << 24));
    const auto rows = in.ranged("rows", 1, kMaxSide);
    const auto cols = in.ranged("cols", 1, kMaxSide);
    z.grid = in.grid(rows, cols, "latent values");
    z.validate();
    return z;
}

void write_latent_entry(BinWriter& out, const LatentState& z) {
    z.validate();
    out.i64(z.step);
    out.i64(z.rows());
    out.i64(z.cols());
    out.grid(z.grid);
}

}  // namespace

void save_latent(const LatentState& z, const fs::path& path) {
    BinWriter out(path);
    out.magic("AMCRLAT1");
    write_latent_entry(out, z);
    out.close();
}

LatentState load_latent(const fs::path& path) {
    BinReader in(path);
    in.expect_magic("AMCRLAT1");
    LatentState z = read_latent_entry(in);
    in.expect_eof();
    return z;
}

void save_trajectory(const std::vector<LatentState>& traj, const fs::path& path) {
    BinWriter out(path);
    out.magic("AMCRTRJ1");
    out.i64(static_cast<std::int64_t>(traj.size()));
    for (const auto& z : traj) write_latent_entry(out, z);
    out.close();
}

std::vector<LatentState> load_trajectory(const fs::path& path) {
    BinReader in(path);
    in.expect_magic("AMCRTRJ1");
    const auto count = in.ranged("entry count", 0, kMaxEntries);
    std::vector<LatentState> traj;
    traj.reserve(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) traj.push_back(read_latent_entry(in));
    in.expect_eof();
    return traj;
}

void save_masks(const std::map<int, SoftMask>& masks, const fs::path& path) {
    BinWriter out(path);
    out.magic("AMCRMSK1");
    out.i64(static_cast<std::int64_t>(masks.size()));
    for (const auto& [t, mask] : masks) {
        mask.validate();
        out.i64(t);
        out.i64(mask.field.rows());
        out.i64(mask.field.cols());
        out.grid(mask.field);
    }
    out.close();
}

std::map<int, SoftMask> load_masks(const fs::path& path) {
    BinReader in(path);
    in.expect_magic("AMCRMSK1");
    const auto count = in.ranged("entry count", 0, kMaxEntries);
    std::map<int, SoftMask> masks;
    for (std::int64_t i = 0; i < count; ++i) {
        SoftMask m;
        m.step = static_cast<int>(in.ranged("step", 0, 1 << 24));
        const auto rows = in.ranged("rows", 1, kMaxSide);
        const auto cols = in.ranged("cols", 1, kMaxSide);
        m.field = in.grid(rows, cols, "mask values");
        m.validate();
        if (!masks.emplace(m.step, std::move(m)).second)
            throw ValidationError(path.string() + ": duplicate mask step " +
                                  std::to_string(m.step));
    }
    in.expect_eof();
    return masks;
}

void save_patch_embeddings(const PatchEmbeddings& pe, const fs::path& path) {
    pe.validate();
    BinWriter out(path);
    out.magic("AMCRPEM1");
    out.i64(pe.source == PatchSource::Reference ? 1 : 0);
    out.i64(pe.grid_rows);
    out.i64(pe.grid_cols);
    out.i64(pe.dim());
    out.matrix(pe.rows);
    out.close();
}

PatchEmbeddings load_patch_embeddings(const fs::path& path) {
    BinReader in(path);
    in.expect_magic("AMCRPEM1");
    PatchEmbeddings pe;
    const auto source = in.ranged("source", 0, 1);
    pe.source = source == 1 ? PatchSource::Reference : PatchSource::Generated;
    pe.grid_rows = static_cast<int>(in.ranged("grid rows", 1, kMaxSide));
    pe.grid_cols = static_cast<int>(in.ranged("grid cols", 1, kMaxSide));
    const auto dim = in.ranged("dim", 1, kMaxSide);
    pe.rows = in.matrix(static_cast<Eigen::Index>(pe.grid_rows) * pe.grid_cols, dim,
                        "embedding values");
    in.expect_eof();
    pe.validate();
    return pe;
}

void save_attention(const AttentionStack& stack, const fs::path& path) {
    stack.validate();
    BinWriter out(path);
    out.magic("AMCRATT1");
    out.i64(stack.step);
    out.i64(stack.token_count());
    for (const auto& label : stack.token_labels) out.str(label);
    out.i64(static_cast<std::int64_t>(stack.layers.size()));
    for (const auto& layer : stack.layers) {
        out.i64(static_cast<std::int64_t>(layer.heads.size()));
        out.i64(layer.rows);
        out.i64(layer.cols);
        for (const auto& head : layer.heads) out.matrix(head);
    }
    out.close();
}

AttentionStack load_attention(const fs::path& path) {
    BinReader in(path);
    in.expect_magic("AMCRATT1");
    AttentionStack stack;
    stack.step = static_cast<int>(in.ranged("step", 0, 1 << 24));
    const auto tokens = in.ranged("token count", 1, 1 << 12);
    for (std::int64_t i = 0; i < tokens; ++i)
        stack.token_labels.push_back(in.str("token label"));
    const auto layers = in.ranged("layer count", 1, 1 << 10);
    for (std::int64_t l = 0; l < layers; ++l) {
        AttentionLayer layer;
        const auto heads = in.ranged("head count", 1, 1 << 10);
        layer.rows = static_cast<int>(in.ranged("layer rows", 1, 1 << 12));
        layer.cols = static_cast<int>(in.ranged("layer cols", 1, 1 << 12));
        const auto patches = static_cast<Eigen::Index>(layer.rows) * layer.cols;
        for (std::int64_t h = 0; h < heads; ++h)
            layer.heads.push_back(in.matrix(patches, tokens, "attention values"));
        stack.layers.push_back(std::move(layer));
    }
    in.expect_eof();
    stack.validate();
    return stack;
}

namespace {

// depth < 0 selects the compact single-line form.
void canonical_value(const json& v, std::string& out, int depth) {
    const bool compact = depth < 0;
    const auto open = [&](char bracket) {
        out += bracket;
        if (!compact) out += '\n';
    };
    const auto separate = [&](bool first) {
        if (first && compact) return;
        if (!first) out += compact ? ", " : ",\n";
        if (!compact) out.append(2 * (depth + 1), ' ');
    };
    const auto close = [&](char bracket) {
        if (!compact) {
            out += '\n';
            out.append(2 * depth, ' ');
        }
        out += bracket;
    };
    const int inner = compact ? depth : depth + 1;
    switch (v.type()) {
        case json::value_t::object: {
            if (v.empty()) {
                out += "{}";
                return;
            }
            open('{');
            bool first = true;
            for (auto it = v.begin(); it != v.end(); ++it) {  // object_t sorts keys
                separate(first);
                first = false;
                out += json(it.key()).dump();
                out += ": ";
                canonical_value(it.value(), out, inner);
            }
            close('}');
            return;
        }
        case json::value_t::array: {
            if (v.empty()) {
                out += "[]";
                return;
            }
            open('[');
            bool first = true;
            for (const auto& item : v) {
                separate(first);
                first = false;
                canonical_value(item, out, inner);
            }
            close(']');
            return;
        }
        case json::value_t::number_float: {
            const double d = v.get<double>();
            if (!std::isfinite(d))
                throw NumericError("canonical_dump: non-finite number");
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.9g", d);
            out += buf;
            return;
        }
        default:
            out += v.dump();  // integers, strings, booleans, null
            return;
    }
}

template <typename F>
auto parse_guard(const char* what, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw SerializationError(std::string(what) + ": " + e.what());
    }
}

StopReason stop_reason_from_name(const std::string& name) {
    for (StopReason r : {StopReason::Budget, StopReason::MarginalImprovement,
                         StopReason::RiskQuantile, StopReason::Exhausted})
        if (stop_reason_name(r) == name) return r;
    throw SerializationError("unknown stop reason: " + name);
}

RiskBucket bucket_from_name(const std::string& name) {
    for (RiskBucket b : all_risk_buckets())
        if (bucket_name(b) == name) return b;
    throw SerializationError("unknown risk bucket: " + name);
}

}  // namespace

std::string canonical_dump(const json& value) {
    std::string out;
    canonical_value(value, out, 0);
    return out;
}

std::string canonical_dump_compact(const json& value) {
    std::string out;
    canonical_value(value, out, -1);
    return out;
}

json prompt_json(const StructuredPrompt& sp) {
    json slots = json::object();
    for (SlotKind k : all_slot_kinds()) slots[slot_kind_name(k)] = sp.at(k);
    json out;
    out["slots"] = std::move(slots);
    out["source"] = sp.source;
    out["residue"] = sp.residue;
    out["warnings"] = sp.warnings;
    return out;
}

StructuredPrompt structured_prompt_from_json(const json& j) {
    return parse_guard("structured prompt", [&] {
        StructuredPrompt sp;
        for (const auto& [name, phrases] : j.at("slots").items())
            sp.at(slot_kind_from_name(name)) = phrases.get<std::vector<std::string>>();
        sp.source = j.at("source").get<std::string>();
        sp.residue = j.at("residue").get<std::vector<std::string>>();
        sp.warnings = j.at("warnings").get<std::vector<std::string>>();
        return sp;
    });
}

json report_json(const SlotRiskReport& r) {
    json per_phrase = json::object();
    for (const auto& [phrase, risk] : r.per_phrase) {
        json entry;
        entry["score"] = risk.score;
        entry["nearest"] = risk.nearest_corpus_phrase;
        per_phrase[phrase] = std::move(entry);
    }
    json per_bucket = json::object();
    for (RiskBucket b : all_risk_buckets())
        per_bucket[bucket_name(b)] = r.per_bucket[static_cast<int>(b)];
    json ranking = json::array();
    for (RiskBucket b : r.ranking) ranking.push_back(bucket_name(b));
    json out;
    out["per_phrase"] = std::move(per_phrase);
    out["per_bucket"] = std::move(per_bucket);
    out["ranking"] = std::move(ranking);
    return out;
}

SlotRiskReport slot_risk_report_from_json(const json& j) {
    return parse_guard("slot risk report", [&] {
        SlotRiskReport r;
        for (const auto& [phrase, entry] : j.at("per_phrase").items()) {
            PhraseRisk risk;
            risk.score = entry.at("score").get<double>();
            risk.nearest_corpus_phrase = entry.at("nearest").get<std::string>();
            r.per_phrase[phrase] = std::move(risk);
        }
        for (const auto& [name, value] : j.at("per_bucket").items())
            r.per_bucket[static_cast<int>(bucket_from_name(name))] = value.get<double>();
        for (const auto& name : j.at("ranking"))
            r.ranking.push_back(bucket_from_name(name.get<std::string>()));
        return r;
    });
}

json report_json(const SanitizationResult& r) {
    json trace = json::array();
    for (const auto& e : r.trace) {
        json entry;
        entry["slot"] = slot_kind_name(e.slot);
        entry["original"] = e.original;
        entry["chosen"] = e.chosen;
        entry["delta_r"] = e.delta_r;
        entry["align"] = e.align;
        entry["score"] = e.score;
        trace.push_back(std::move(entry));
    }
    json out;
    out["sanitized"] = prompt_json(r.sanitized);
    out["sanitized_flat"] = r.sanitized_flat;
    out["negative_prompts"] = r.negative_prompts;
    out["trace"] = std::move(trace);
    out["stop_reason"] = stop_reason_name(r.stop_reason);
    out["warnings"] = r.warnings;
    return out;
}

SanitizationResult sanitization_result_from_json(const json& j) {
    return parse_guard("sanitization result", [&] {
        SanitizationResult r;
        r.sanitized = structured_prompt_from_json(j.at("sanitized"));
        r.sanitized_flat = j.at("sanitized_flat").get<std::string>();
        r.negative_prompts = j.at("negative_prompts").get<std::vector<std::string>>();
        for (const auto& entry : j.at("trace")) {
            TraceEntry e;
            e.slot = slot_kind_from_name(entry.at("slot").get<std::string>());
            e.original = entry.at("original").get<std::string>();
            e.chosen = entry.at("chosen").get<std::string>();
            e.delta_r = entry.at("delta_r").get<double>();
            e.align = entry.at("align").get<double>();
            e.score = entry.at("score").get<double>();
            r.trace.push_back(std::move(e));
        }
        r.stop_reason = stop_reason_from_name(j.at("stop_reason").get<std::string>());
        r.warnings = j.at("warnings").get<std::vector<std::string>>();
        return r;
    });
}

json report_json(const DetectionReport& r) {
    json per_step = json::array();
    for (const auto& [t, s] : r.per_step) {
        json entry;
        entry["t"] = t;
        entry["s_img"] = s;
        per_step.push_back(std::move(entry));
    }
    json out;
    out["per_step"] = std::move(per_step);
    out["overall"] = r.overall;
    out["rule"] = aggregation_rule_name(r.rule);
    out["tau"] = r.tau;
    out["infringed"] = r.infringed;
    return out;
}

DetectionReport detection_report_from_json(const json& j) {
    return parse_guard("detection report", [&] {
        DetectionReport r;
        for (const auto& entry : j.at("per_step"))
            r.per_step[entry.at("t").get<int>()] = entry.at("s_img").get<double>();
        r.overall = j.at("overall").get<double>();
        r.rule = aggregation_rule_from_name(j.at("rule").get<std::string>());
        r.tau = j.at("tau").get<double>();
        r.infringed = j.at("infringed").get<bool>();
        return r;
    });
}

json report_json(const LossReport& r) {
    auto step_array = [](const std::map<int, double>& steps) {
        json arr = json::array();
        for (const auto& [t, value] : steps) {
            json entry;
            entry["t"] = t;
            entry["value"] = value;
            arr.push_back(std::move(entry));
        }
        return arr;
    };
    json out;
    out["l_preserve"] = r.l_preserve;
    out["l_risk"] = r.l_risk;
    out["l_align"] = r.l_align;
    out["l_total"] = r.l_total;
    out["lambda_r"] = r.lambda_r;
    out["lambda_a"] = r.lambda_a;
    out["step_risk"] = step_array(r.step_risk);
    out["step_align"] = step_array(r.step_align);
    return out;
}

LossReport loss_report_from_json(const json& j) {
    return parse_guard("loss report", [&] {
        LossReport r;
        r.l_preserve = j.at("l_preserve").get<double>();
        r.l_risk = j.at("l_risk").get<double>();
        r.l_align = j.at("l_align").get<double>();
        r.l_total = j.at("l_total").get<double>();
        r.lambda_r = j.at("lambda_r").get<double>();
        r.lambda_a = j.at("lambda_a").get<double>();
        for (const auto& entry : j.at("step_risk"))
            r.step_risk[entry.at("t").get<int>()] = entry.at("value").get<double>();
        for (const auto& entry : j.at("step_align"))
            r.step_align[entry.at("t").get<int>()] = entry.at("value").get<double>();
        return r;
    });
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError("read failed: " + path.string());
    return buf.str();
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + path.string());
}

void RemoteEncoderConfig::validate() const {
    if (host.empty()) throw ValidationError("remote encoder: empty host");
    if (port < 1 || port > 65535)
        throw ValidationError("remote encoder: port out of range");
    if (path.empty() || path.front() != '/')
        throw ValidationError("remote encoder: path must start with '/'");
    if (dim < 1) throw ValidationError("remote encoder: dim must be >= 1");
    if (timeout_ms < 1) throw ValidationError("remote encoder: timeout must be >= 1 ms");
    if (max_retries < 0) throw ValidationError("remote encoder: negative retry count");
    if (backoff_ms < 0) throw ValidationError("remote encoder: negative backoff");
}

namespace {

bool is_timeout(httplib::Error e) {
    return e == httplib::Error::ConnectionTimeout || e == httplib::Error::Read ||
           e == httplib::Error::Write;
}

// One POST with the configured retry/backoff policy. Transport failures and
// 5xx retry; other statuses and body problems are the caller's to type.
httplib::Result post_with_retries(const RemoteEncoderConfig& cfg,
                                  const std::string& body) {
    cfg.validate();
    std::string last_failure;
    bool saw_timeout = false;
    for (int attempt = 0; attempt <= cfg.max_retries; ++attempt) {
        if (attempt > 0 && cfg.backoff_ms > 0)
            std::this_thread::sleep_for(
                std::chrono::milliseconds(cfg.backoff_ms << (attempt - 1)));
        httplib::Client client(cfg.host, cfg.port);
        client.set_connection_timeout(cfg.timeout_ms / 1000,
                                      (cfg.timeout_ms % 1000) * 1000);
        client.set_read_timeout(cfg.timeout_ms / 1000, (cfg.timeout_ms % 1000) * 1000);
        client.set_write_timeout(cfg.timeout_ms / 1000, (cfg.timeout_ms % 1000) * 1000);
        httplib::Headers headers;
        if (!cfg.bearer_token.empty())
            headers.emplace("Authorization", "Bearer " + cfg.bearer_token);
        auto res = client.Post(cfg.path, headers, body, "application/json");
        if (!res) {
            saw_timeout = is_timeout(res.error());
            last_failure = httplib::to_string(res.error());
            continue;
        }
        if (res->status >= 500) {
            saw_timeout = false;
            last_failure = "status " + std::to_string(res->status);
            continue;
        }
        return res;
    }
    const std::string detail = last_failure + " from " + cfg.host + ":" +
                               std::to_string(cfg.port) + " after " +
                               std::to_string(cfg.max_retries + 1) + " attempts";
    if (saw_timeout) throw ProviderTimeout("provider: " + detail);
    throw ProviderUnavailable("provider: " + detail);
}

json parse_response_body(const httplib::Result& res, const std::string& endpoint) {
    if (res->status != 200)
        throw ProtocolError(endpoint + ": unexpected status " +
                            std::to_string(res->status));
    json body = json::parse(res->body, nullptr, false);
    if (body.is_discarded())
        throw ProtocolError(endpoint + ": response is not valid JSON");
    return body;
}

}  // namespace

std::vector<VectorXd> remote_embed(const std::vector<std::string>& texts,
                                   const RemoteEncoderConfig& cfg) {
    if (texts.empty()) throw ContractViolation("remote_embed: empty text batch");
    json request;
    request["texts"] = texts;
    auto res = post_with_retries(cfg, request.dump());
    json body = parse_response_body(res, "remote_embed");
    if (!body.is_object() || !body.contains("vectors") || !body["vectors"].is_array())
        throw ProtocolError("remote_embed: response lacks a vectors array");
    const json& vectors = body["vectors"];
    if (vectors.size() != texts.size())
        throw ProtocolError("remote_embed: " + std::to_string(texts.size()) +
                            " texts but " + std::to_string(vectors.size()) + " vectors");
    std::vector<VectorXd> out;
    out.reserve(texts.size());
    for (const json& vec : vectors) {
        if (!vec.is_array())
            throw ProtocolError("remote_embed: vector entry is not an array");
        if (static_cast<Eigen::Index>(vec.size()) != cfg.dim)
            throw DimensionDrift("remote_embed: declared dim " + std::to_string(cfg.dim) +
                                 ", got " + std::to_string(vec.size()));
        VectorXd e(cfg.dim);
        for (Eigen::Index i = 0; i < cfg.dim; ++i) {
            const json& x = vec[static_cast<std::size_t>(i)];
            if (!x.is_number())
                throw ProtocolError("remote_embed: non-numeric vector entry");
            e[i] = x.get<double>();
        }
        if (!e.allFinite()) throw ProtocolError("remote_embed: non-finite vector entry");
        if (e.norm() == 0.0) throw ProtocolError("remote_embed: zero vector in response");
        out.push_back(normalize_unit(e));
    }
    return out;
}

RemoteTextEncoder::RemoteTextEncoder(RemoteEncoderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
}

std::vector<VectorXd> RemoteTextEncoder::embed(std::span<const std::string> texts) {
    return remote_embed(std::vector<std::string>(texts.begin(), texts.end()), cfg_);
}

std::string RemoteTextEncoder::id() const {
    return "remote/" + cfg_.host + ":" + std::to_string(cfg_.port) + cfg_.path;
}

HttpSlotProvider::HttpSlotProvider(RemoteEncoderConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
}

std::map<std::string, std::vector<std::string>> HttpSlotProvider::slots_for(
    const std::string& prompt, const std::vector<std::string>& schema) {
    json request;
    request["prompt"] = prompt;
    request["schema"] = schema;
    auto res = post_with_retries(cfg_, request.dump());
    json body = parse_response_body(res, "slot provider");
    if (!body.is_object())
        throw ProtocolError("slot provider: response is not an object");
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& [kind, phrases] : body.items()) {
        if (std::find(schema.begin(), schema.end(), kind) == schema.end())
            throw ProtocolError("slot provider: unknown slot kind '" + kind + "'");
        if (!phrases.is_array())
            throw ProtocolError("slot provider: slot '" + kind + "' is not a list");
        std::vector<std::string> values;
        for (const json& p : phrases) {
            if (!p.is_string())
                throw ProtocolError("slot provider: non-string phrase under '" + kind + "'");
            values.push_back(p.get<std::string>());
        }
        out[kind] = std::move(values);
    }
    return out;
}

namespace {

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
    std::vector<fs::path> files;
    if (!fs::exists(dir)) return files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ext)
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    return files;
}

}  // namespace

FixtureBundle ingest_fixture_bundle(const fs::path& dir, TextEncoder& encoder) {
    if (!fs::is_directory(dir))
        throw IoError("fixture bundle: not a directory: " + dir.string());
    FixtureBundle out;
    const auto prompts_file = dir / "prompts.txt";
    if (fs::exists(prompts_file)) {
        std::istringstream lines(read_text_file(prompts_file));
        std::string line;
        while (std::getline(lines, line)) {
            while (!line.empty() && (line.back() == '\r' || line.back() == ' '))
                line.pop_back();
            if (!line.empty()) out.prompts.push_back(line);
        }
    }
    const auto corpus_file = dir / "corpus.jsonl";
    if (fs::exists(corpus_file)) out.corpus = load_corpus(corpus_file, encoder);
    for (const auto& file : sorted_files(dir / "latents", ".lat"))
        out.latents.emplace(file.stem().string(), load_latent(file));
    for (const auto& file : sorted_files(dir / "attention", ".att"))
        out.attention.emplace(file.stem().string(), load_attention(file));
    for (const auto& file : sorted_files(dir / "patches", ".pem"))
        out.patches.emplace(file.stem().string(), load_patch_embeddings(file));
    return out;
}

void save_mitigation_fixture(const MitigationFixture& fx, const fs::path& dir) {
    fx.validate();
    fs::create_directories(dir / "eps");
    fs::create_directories(dir / "refs");
    json meta;
    meta["T"] = fx.sched.T;
    meta["family"] = schedule_family_name(fx.sched.family);
    meta["steps"] = fx.steps;
    meta["grid_rows"] = fx.grid_rows;
    meta["grid_cols"] = fx.grid_cols;
    meta["embed_dim"] = static_cast<std::int64_t>(fx.embed_dim);
    meta["encoder_seed"] = std::to_string(fx.encoder_seed);  // exceeds 2^53
    meta["pretrain_steps"] = fx.pretrain_steps;
    meta["pretrain_lr"] = fx.pretrain_lr;
    meta["f_text"] = std::vector<double>(fx.f_text.data(), fx.f_text.data() + fx.f_text.size());
    write_text_file(dir / "meta.json", meta.dump(2) + "\n");
    save_latent({fx.z0, 0, 1}, dir / "z0.lat");
    for (int t : fx.steps) {
        const auto name = "t" + std::to_string(t);
        save_latent({fx.eps.at(t), t, 1}, dir / "eps" / (name + ".lat"));
        save_patch_embeddings(fx.refs.at(t), dir / "refs" / (name + ".pem"));
    }
    save_masks(fx.masks, dir / "masks.msk");
}

MitigationFixture load_mitigation_fixture(const fs::path& dir) {
    if (!fs::is_directory(dir))
        throw IoError("mitigation fixture: not a directory: " + dir.string());
    json meta = json::parse(read_text_file(dir / "meta.json"), nullptr, false);
    if (meta.is_discarded())
        throw SerializationError((dir / "meta.json").string() + ": invalid JSON");
    MitigationFixture fx;
    parse_guard("mitigation fixture meta", [&] {
        fx.sched = make_schedule(meta.at("T").get<int>(),
                                 schedule_family_from_name(meta.at("family").get<std::string>()));
        fx.steps = meta.at("steps").get<std::vector<int>>();
        fx.grid_rows = meta.at("grid_rows").get<int>();
        fx.grid_cols = meta.at("grid_cols").get<int>();
        fx.embed_dim = meta.at("embed_dim").get<std::int64_t>();
        fx.encoder_seed = std::stoull(meta.at("encoder_seed").get<std::string>());
        fx.pretrain_steps = meta.at("pretrain_steps").get<int>();
        fx.pretrain_lr = meta.at("pretrain_lr").get<double>();
        const auto f_text = meta.at("f_text").get<std::vector<double>>();
        fx.f_text = Eigen::Map<const VectorXd>(f_text.data(),
                                               static_cast<Eigen::Index>(f_text.size()));
        return 0;
    });
    fx.z0 = load_latent(dir / "z0.lat").grid;
    for (int t : fx.steps) {
        const auto name = "t" + std::to_string(t);
        fx.eps[t] = load_latent(dir / "eps" / (name + ".lat")).grid;
        fx.refs[t] = load_patch_embeddings(dir / "refs" / (name + ".pem"));
    }
    fx.masks = load_masks(dir / "masks.msk");
    fx.validate();
    return fx;
}

}  // namespace amcr
