#pragma once

#include "icegen/config.hpp"
#include "icegen/data.hpp"
#include "icegen/io.hpp"
#include "icegen/metrics.hpp"

#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace icegen {

using Logger = std::function<void(std::string_view)>;

/// Baseline curve from the non-icing rows, ramp limits from all rows of `train_rows`.
PhysicsEnvelope fit_envelope(const SeriesFrame& train_rows, double ramp_quantile, double alpha, double relaxed_factor);

/// Rows at which a horizon may start: the context before it and the horizon
/// itself lie inside [context_floor, end) within one segment. Candidates are
/// spaced one horizon apart starting at `begin`.
std::vector<std::size_t> candidate_windows(const SeriesFrame& frame, std::size_t begin, std::size_t end,
                                           std::size_t context_steps, std::size_t horizon);
/// `count` candidates spread evenly over the list (all of them when fewer).
std::vector<std::size_t> spread_windows(const std::vector<std::size_t>& candidates, std::size_t count);
/// Candidates whose realized power variance over the horizon is at or above
/// the `quantile` nearest-rank variance (at least one window).
std::vector<std::size_t> volatile_windows(const SeriesFrame& frame, const std::vector<std::size_t>& candidates,
                                          std::size_t horizon, double quantile);

/// Decodes one scenario set per window start. Each window uses its own seed
/// derived from `cfg.seed`, so modes compared on the same windows share seeds.
std::vector<ScenarioSet> generate_windows(const ModelParams& params, const SeriesFrame& frame,
                                          const std::vector<std::size_t>& truth_begin, std::size_t context_steps,
                                          const PhysicsEnvelope& env, const TokenizerSpec& spec, const DecodeConfig& cfg);

/// Attaches realized wind to each set and scores it against the realized power.
EvalReport evaluate_windows(std::vector<ScenarioSet>& sets, const SeriesFrame& frame,
                            const std::vector<std::size_t>& truth_begin, const PhysicsEnvelope& env, std::size_t kld_bins);

/// Context steps used for decoding: the longest history that fits next to the horizon.
std::size_t decode_context_steps(const RunConfig& cfg);

struct PipelineResult {
    EvalReport report;
    TrainResult training;
    FeatureSelection features;
    std::vector<std::string> artifacts;
};

/// synth/ingest, fit-curve, fit-spec, tokenize, train, generate, evaluate.
/// Every artifact in `cfg.out_dir` is stamped with the config hash and seed;
/// a failure leaves a manifest naming the stage and marking outputs stale.
PipelineResult run_pipeline(const RunConfig& cfg, const Logger& log = {});

struct SensitivityRow {
    ConstraintMode mode;
    EvalReport report;
};

/// The three constraint modes on the high-volatility test windows, with
/// matched seeds.
std::vector<SensitivityRow> run_sensitivity(const RunConfig& cfg, const ModelParams& params, const SeriesFrame& frame,
                                            const PhysicsEnvelope& env, const TokenizerSpec& spec);

/// Throws a data error when `prov` records a different hash for `name`.
void require_input(const Provenance& prov, const std::string& name, std::uint64_t actual);

}  // namespace icegen
