#pragma once

#include "icegen/model.hpp"
#include "icegen/power_curve.hpp"
#include "icegen/tokenizer.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace icegen {

enum class ConstraintMode { Unconstrained, Default, Stricter };

std::string_view mode_name(ConstraintMode m);
ConstraintMode parse_mode(std::string_view s);

struct DecodeConfig {
    double temperature = 1.0;
    double top_p = 0.9;
    std::size_t horizon = 24;
    std::size_t scenarios = 50;
    std::uint64_t seed = 0;
    ConstraintMode mode = ConstraintMode::Default;
    std::size_t smoothing_window = 3;  // odd; 1 disables smoothing
    /// Default-mode overrides of the envelope's alpha and relaxed tolerance.
    std::optional<double> alpha;
    std::optional<double> relaxed_ramp_kw;
    /// Stricter mode: alpha * factor, relaxed tolerance / divisor.
    double stricter_alpha_factor = 0.95;
    double stricter_ramp_divisor = 1.5;
    /// Repeat the last observed exogenous values instead of using future rows.
    bool persistence = false;
    std::size_t threads = 1;

    void validate() const;
};

/// Effective decoding limits for one constraint mode.
struct ModeLimits {
    bool constrained = true;
    double alpha = 1.0;
    double relaxed_ramp_kw = 0.0;
};

ModeLimits limits_for(const PhysicsEnvelope& env, const DecodeConfig& cfg);
ModeLimits limits_for(const PhysicsEnvelope& env, const DecodeConfig& cfg, ConstraintMode mode);

/// Candidate power tokens with their (renormalized) probabilities.
struct Candidates {
    std::vector<Token> tokens;
    std::vector<double> probs;
};

/// Temperature-scaled nucleus filter. `probs[i]` is the probability of token
/// `offset + i`. Tokens are ranked by probability (lower id first on ties)
/// and the smallest prefix with mass >= top_p is kept and renormalized.
Candidates nucleus_filter(std::span<const double> probs, double temperature, double top_p, Token offset = 0);

/// Keeps candidates whose de-quantized power respects the cap for `wind_next`
/// and lies within the relaxed tolerance of `p_prev`. Identity when unconstrained.
Candidates prune_candidates(const Candidates& c, double p_prev_kw, double wind_next_ms, const PhysicsEnvelope& env,
                            const TokenizerSpec& spec, const ModeLimits& limits);

struct Projection {
    Token token = 0;
    bool warning = false;  // no power token satisfies both constraints
};

/// Nearest feasible power token to `p_prev`; when none exists, the token of
/// least total violation, flagged with a warning.
Projection project_back(double p_prev_kw, double wind_next_ms, const PhysicsEnvelope& env, const TokenizerSpec& spec,
                        const ModeLimits& limits);

/// Conditioning for one decode: observed context plus the exogenous tokens
/// (and raw wind speeds) of the horizon.
struct DecodeWindow {
    TokenSequence context;
    std::vector<std::array<Token, kChannelCount - 1>> future;  // wind, temp, pitch, yaw, gen per step
    std::vector<double> future_wind_ms;
    double last_power_kw = 0.0;
};

/// Context rows [begin, begin + context_steps) and the following `horizon`
/// rows as conditioning. With `persistence`, the last context row's exogenous
/// values are repeated instead and the future rows are not read.
DecodeWindow make_decode_window(const SeriesFrame& frame, std::size_t begin, std::size_t context_steps,
                                std::size_t horizon, const TokenizerSpec& spec, bool persistence = false);

/// M scenarios of H steps, row-major by scenario.
struct ScenarioSet {
    std::size_t scenarios = 0;
    std::size_t horizon = 0;
    std::vector<double> power_kw;
    std::vector<std::uint8_t> projected;  // 1 where projection-back replaced the sample
    std::vector<std::uint8_t> warnings;   // 1 where even projection found no feasible token
    std::vector<double> wind_ms;          // horizon wind used for the cap
    double rated_kw = 0.0;
    double last_power_kw = 0.0;
    ConstraintMode mode = ConstraintMode::Default;
    std::uint64_t seed = 0;

    double at(std::size_t m, std::size_t h) const { return power_kw[m * horizon + h]; }
    double& at(std::size_t m, std::size_t h) { return power_kw[m * horizon + h]; }
};

/// Centered moving average followed by re-projection: each value is clamped to
/// [0, rated] and, when constrained, to the cap and to within the relaxed
/// tolerance of the previous value. A backward pass lowers caps that could
/// not be reached from the next step, so the ramp bound holds at every pair.
void smooth_and_project(std::span<double> trajectory, double p_prev_kw, std::span<const double> caps_kw,
                        const ModeLimits& limits, double rated_kw, std::size_t window);

ScenarioSet generate(const ModelParams& params, const DecodeWindow& window, const PhysicsEnvelope& env,
                     const TokenizerSpec& spec, const DecodeConfig& cfg);

}  // namespace icegen
