#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "amcr/attention.hpp"
#include "amcr/detect.hpp"
#include "amcr/diffusion.hpp"
#include "amcr/encoders.hpp"
#include "amcr/mitigate.hpp"
#include "amcr/prompt.hpp"
#include "amcr/risk.hpp"
#include "amcr/sanitize.hpp"

namespace amcr {

using json = nlohmann::json;

// Binary containers share one shape: 8-byte magic, little-endian int64
// headers, row-major float64 payload. Formats are documented in
// docs/latents.md. Loaders validate structure before returning; a short or
// overlong file is a ValidationError naming the path.

void save_latent(const LatentState& z, const std::filesystem::path& path);
LatentState load_latent(const std::filesystem::path& path);

// Aligned clean-estimate sequence; order on disk is the order given.
void save_trajectory(const std::vector<LatentState>& traj,
                     const std::filesystem::path& path);
std::vector<LatentState> load_trajectory(const std::filesystem::path& path);

void save_masks(const std::map<int, SoftMask>& masks,
                const std::filesystem::path& path);
std::map<int, SoftMask> load_masks(const std::filesystem::path& path);

void save_patch_embeddings(const PatchEmbeddings& pe,
                           const std::filesystem::path& path);
PatchEmbeddings load_patch_embeddings(const std::filesystem::path& path);

void save_attention(const AttentionStack& stack, const std::filesystem::path& path);
AttentionStack load_attention(const std::filesystem::path& path);

// Canonical JSON: object keys sorted, floats at 9 significant digits,
// 2-space indent, trailing newline added by persist_report. Two equal
// reports always serialize to identical bytes; a non-finite number refuses
// with NumericError. Parsing canonical text back reproduces values to the
// printed precision, and re-serializing the parse is byte-identical.
std::string canonical_dump(const json& value);
std::string canonical_dump_compact(const json& value);  // one line, for JSONL

json prompt_json(const StructuredPrompt& sp);
StructuredPrompt structured_prompt_from_json(const json& j);

json report_json(const SlotRiskReport& r);
json report_json(const SanitizationResult& r);
json report_json(const DetectionReport& r);
json report_json(const LossReport& r);

SlotRiskReport slot_risk_report_from_json(const json& j);
SanitizationResult sanitization_result_from_json(const json& j);
DetectionReport detection_report_from_json(const json& j);
LossReport loss_report_from_json(const json& j);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

template <typename Report>
void persist_report(const Report& r, const std::filesystem::path& path) {
    write_text_file(path, canonical_dump(report_json(r)) + "\n");
}

// Wire client for a real embedding service. Request {"texts": [...]},
// response {"vectors": [[...]]}; one vector per input, unit-normalized
// client-side. Transport failures retry with exponential backoff, then
// surface as typed provider errors; a wrong-length or wrong-dimension
// response never silently substitutes.
struct RemoteEncoderConfig {
    std::string host = "127.0.0.1";
    int port = 0;
    std::string path = "/embed";
    std::string bearer_token;  // optional Authorization passthrough
    Eigen::Index dim = 64;     // declared dimension; drift is an error
    int timeout_ms = 2000;
    int max_retries = 2;   // attempts beyond the first
    int backoff_ms = 100;  // doubles per retry

    void validate() const;
};

std::vector<VectorXd> remote_embed(const std::vector<std::string>& texts,
                                   const RemoteEncoderConfig& cfg);

class RemoteTextEncoder : public TextEncoder {
public:
    explicit RemoteTextEncoder(RemoteEncoderConfig cfg);

    std::vector<VectorXd> embed(std::span<const std::string> texts) override;
    std::string id() const override;
    Eigen::Index dim() const override { return cfg_.dim; }

private:
    RemoteEncoderConfig cfg_;
};

// Slotting backend over the same transport. Request {"prompt": ...,
// "schema": [slot kind names]}, response an object keyed by kind names
// with string-list values. parse_with_provider handles the fallback.
class HttpSlotProvider : public SlotProvider {
public:
    explicit HttpSlotProvider(RemoteEncoderConfig cfg);

    std::map<std::string, std::vector<std::string>> slots_for(
        const std::string& prompt, const std::vector<std::string>& schema) override;

private:
    RemoteEncoderConfig cfg_;
};

// On-disk fixture bundle (layout in docs/fixtures.md). Every present
// artifact is validated against its type invariants before use; absent
// parts load empty.
struct FixtureBundle {
    std::vector<std::string> prompts;                 // prompts.txt
    RiskCorpus corpus;                                // corpus.jsonl
    std::map<std::string, LatentState> latents;       // latents/*.lat
    std::map<std::string, AttentionStack> attention;  // attention/*.att
    std::map<std::string, PatchEmbeddings> patches;   // patches/*.pem
};

FixtureBundle ingest_fixture_bundle(const std::filesystem::path& dir,
                                    TextEncoder& encoder);

// Mitigation bundle: meta.json plus binary artifacts per evaluated step.
// load validates the reassembled fixture before returning it.
void save_mitigation_fixture(const MitigationFixture& fx,
                             const std::filesystem::path& dir);
MitigationFixture load_mitigation_fixture(const std::filesystem::path& dir);

}  // namespace amcr
