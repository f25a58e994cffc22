#pragma once

#include "icegen/metrics.hpp"
#include "icegen/model.hpp"
#include "icegen/power_curve.hpp"
#include "icegen/sampler.hpp"
#include "icegen/tokenizer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace icegen {

namespace fs = std::filesystem;

/// Stamp carried by every artifact: the run configuration hash, the seed and
/// hashes of the inputs the artifact was derived from.
struct Provenance {
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::map<std::string, std::uint64_t> inputs;
};

std::string hex64(std::uint64_t v);
std::uint64_t parse_hex64(const std::string& s);

std::string read_text(const fs::path& path);
/// Writes through a temporary file and renames, so readers never see a partial file.
void write_text(const fs::path& path, const std::string& text);
std::uint64_t hash_file(const fs::path& path);

template <class T>
struct Stamped {
    T value;
    Provenance provenance;
};

/// Hash of the content fields only, independent of provenance and formatting.
std::uint64_t content_hash(const PhysicsEnvelope& env);
std::uint64_t content_hash(const TokenizerSpec& spec);

std::string envelope_to_json(const PhysicsEnvelope& env, const Provenance& prov);
Stamped<PhysicsEnvelope> envelope_from_json(const std::string& text);
void save_envelope(const fs::path& path, const PhysicsEnvelope& env, const Provenance& prov);
Stamped<PhysicsEnvelope> load_envelope(const fs::path& path);

std::string spec_to_json(const TokenizerSpec& spec, const Provenance& prov);
Stamped<TokenizerSpec> spec_from_json(const std::string& text);
void save_spec(const fs::path& path, const TokenizerSpec& spec, const Provenance& prov);
Stamped<TokenizerSpec> load_spec(const fs::path& path);

/// Token stream with its segment boundaries (in steps).
struct TokenFile {
    TokenSequence sequence;
    std::vector<std::size_t> segment_starts;
    Provenance provenance;
};

/// `path` holds little-endian u16 ids; `path + ".json"` holds steps, channel
/// count, segment starts and provenance.
void save_tokens(const fs::path& path, const TokenSequence& seq, const std::vector<std::size_t>& segment_starts,
                 const Provenance& prov);
TokenFile load_tokens(const fs::path& path);

struct CheckpointMeta {
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
    std::uint64_t spec_hash = 0;
    std::uint64_t envelope_hash = 0;
};

struct Checkpoint {
    ModelParams params;
    CheckpointMeta meta;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, all little-endian:
///   "ICEGCKPT" | u32 version | u32 d_model, heads, blocks, d_ff, vocab, context | f32 dropout
///   | u64 seed, config hash, spec hash, envelope hash | u32 tensor count
///   | per tensor: u32 rows, u32 cols, rows*cols f32 row-major
///   | u64 FNV-1a of every preceding byte
void save_checkpoint(const fs::path& path, const ModelParams& params, const CheckpointMeta& meta);
Checkpoint load_checkpoint(const fs::path& path);
std::vector<std::uint8_t> checkpoint_bytes(const ModelParams& params, const CheckpointMeta& meta);
Checkpoint checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes);

/// Scenario table: one row per (window, scenario, step).
struct ScenarioFile {
    std::vector<ScenarioSet> sets;
    std::vector<std::size_t> truth_begin;  // row of the first horizon step in the truth frame
    Provenance provenance;
};

/// Header comments carry provenance and, per window, the truth row and mode;
/// columns are window_id, scenario_id, step, power_kw, projected_flag.
void save_scenarios(const fs::path& path, const ScenarioFile& file);
ScenarioFile load_scenarios(const fs::path& path);

std::string report_to_json(const EvalReport& report, const std::map<std::string, std::string>& config_echo,
                           const Provenance& prov);
void save_report(const fs::path& path, const EvalReport& report, const std::map<std::string, std::string>& config_echo,
                 const Provenance& prov);

}  // namespace icegen
