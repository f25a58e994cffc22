#pragma once

#include "icegen/physics.hpp"
#include "icegen/rng.hpp"
#include "icegen/tokenizer.hpp"

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace icegen {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t blocks = 3;
    std::size_t d_ff = 256;
    std::size_t vocab = 384;
    std::size_t context = 96 * kChannelCount;  // maximum flattened length
    double dropout = 0.1;

    std::size_t head_dim() const { return d_model / heads; }
    void validate() const;
};

/// Pre-norm decoder block. Per-head projections are stored side by side:
/// head h owns columns [h * d_k, (h + 1) * d_k) of the query/key/value matrices.
struct BlockParams {
    Mat ln1_gain, ln1_bias;  // 1 x d
    Mat w_query, w_key, w_value;  // d x d
    Mat w_attn_out;               // d x d
    Mat ln2_gain, ln2_bias;       // 1 x d
    Mat w_ff1, b_ff1;             // d x d_ff, 1 x d_ff
    Mat w_ff2, b_ff2;             // d_ff x d, 1 x d
};

struct NamedTensor {
    std::string name;
    Mat* value;
};
struct ConstNamedTensor {
    std::string name;
    const Mat* value;
};

struct ModelParams {
    ModelConfig config;
    Mat embedding;  // V x d
    std::vector<BlockParams> blocks;
    Mat final_gain, final_bias;  // 1 x d
    Mat w_output;                // V x d

    /// All-zero parameters of the right shapes (also used for gradients and optimizer moments).
    static ModelParams zeros(const ModelConfig& config);
    /// N(0, 0.02) weights, unit layer-norm gains, zero biases.
    static ModelParams init(const ModelConfig& config, std::uint64_t seed);

    /// Every trainable tensor in declaration order (the checkpoint order).
    std::vector<NamedTensor> tensors();
    std::vector<ConstNamedTensor> tensors() const;
    std::size_t parameter_count() const;
    bool all_finite() const;
};

/// Deterministic sinusoidal encodings for flattened positions [0, positions).
Mat positional_encoding(std::size_t positions, std::size_t d_model);

/// Next-token distributions for every position (rows sum to 1). No dropout.
Mat forward(const ModelParams& params, std::span<const Token> tokens);

/// -sum_t log max(o_t[target_t], 1e-12) over the rows of `probs`.
double loss_ce(const Mat& probs, std::span<const Token> targets);

/// Everything the composite objective needs to know about the token layout
/// and the physics envelope, in normalized power units.
struct ObjectiveContext {
    std::size_t channels = kChannelCount;  // tokens per step
    std::size_t power_offset = 0;
    std::vector<double> power_values;      // normalized power per power token
    std::size_t wind_position = 1;         // wind slot within a step
    std::size_t wind_offset = 0;
    std::vector<double> wind_cap;          // normalized min(1, alpha P_norm(v)/rated) per wind token
    double ramp_up = 0.0;                  // normalized
    double ramp_down = 0.0;
    LossWeights weights;
    /// Ablation: count cross-entropy only at power-token targets.
    bool ce_power_only = false;

    static ObjectiveContext from(const TokenizerSpec& spec, const PhysicsEnvelope& env, const LossWeights& weights);
    bool physics_enabled() const;
};

struct ObjectiveValue {
    double total = 0.0;
    double ce = 0.0;  // mean nats per counted target
    double cap = 0.0;
    double ramp = 0.0;
    double tv = 0.0;
    std::size_t targets = 0;
};

/// Composite objective on one window: tokens[0..n-1) predict tokens[1..n).
/// The cross-entropy is averaged per target; the physics terms act on the
/// expected de-quantized power at every position that predicts a power token.
ObjectiveValue evaluate_objective(const ModelParams& params, std::span<const Token> window, const ObjectiveContext& ctx);

/// Same objective with exact reverse-mode gradients accumulated into `grad`.
/// `dropout_rng` may be null when `dropout` is 0.
ObjectiveValue accumulate_gradients(const ModelParams& params, std::span<const Token> window, const ObjectiveContext& ctx,
                                    ModelParams& grad, double dropout = 0.0, Rng* dropout_rng = nullptr);

/// Incremental inference with a key/value cache. Copying a Decoder forks the
/// cached state; the parameters must outlive every copy and stay unchanged.
class Decoder {
public:
    explicit Decoder(const ModelParams& params);

    /// Appends tokens and returns the next-token distribution after the last one.
    const Eigen::VectorXd& append(std::span<const Token> tokens);
    const Eigen::VectorXd& distribution() const { return probs_; }
    std::size_t length() const { return length_; }

private:
    const ModelParams* params_;
    std::vector<Mat> keys_;
    std::vector<Mat> values_;
    std::size_t length_ = 0;
    Eigen::VectorXd probs_;
};

}  // namespace icegen
