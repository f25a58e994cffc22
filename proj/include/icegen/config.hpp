#pragma once

#include "icegen/data.hpp"
#include "icegen/model.hpp"
#include "icegen/physics.hpp"
#include "icegen/sampler.hpp"
#include "icegen/train.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

namespace icegen {

/// Everything one pipeline run needs. Keys are `section.name` in the text form.
struct RunConfig {
    // [run]
    std::size_t seed = 7;
    std::string out_dir = "run";
    std::size_t threads = 1;

    // [data]
    std::string input;  // empty: generate a synthetic frame
    std::size_t synth_length = 5000;
    double synth_rated_kw = 2000.0;
    double train_fraction = 0.7;
    double val_fraction = 0.15;
    double test_fraction = 0.15;
    double feature_threshold = 0.1;

    // [curve]
    double ramp_quantile = 0.99;
    double alpha = 1.0;
    double relaxed_factor = 1.5;

    // [tokenizer]
    double mu = 120.0;

    // [model]
    std::size_t d_model = 64;
    std::size_t heads = 4;
    std::size_t blocks = 3;
    std::size_t d_ff = 256;
    std::size_t context_steps = 96;
    double dropout = 0.1;

    // [train]
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    double learning_rate = 3e-4;
    double clip_norm = 1.0;
    std::size_t stride_steps = 24;
    std::size_t max_steps = 0;
    bool ce_power_only = false;

    // [loss]
    double lambda_cap = 1.0;
    double lambda_ramp = 0.5;
    double lambda_tv = 0.1;
    double huber_delta = 0.05;

    // [decode]
    double temperature = 1.0;
    double top_p = 0.9;
    std::size_t horizon = 24;
    std::size_t scenarios = 50;
    ConstraintMode mode = ConstraintMode::Default;
    std::size_t smoothing_window = 3;
    double stricter_alpha_factor = 0.95;
    double stricter_ramp_divisor = 1.5;
    bool persistence = false;
    std::size_t windows = 8;  // evaluation windows drawn from the test split

    // [metrics]
    std::size_t kld_bins = 50;
    double volatility_quantile = 0.9;  // sensitivity runs use windows above this variance quantile

    void validate() const;
};

/// Parses `key = value` lines grouped under `[section]` headers; `#` starts a
/// comment. Unknown sections or keys, duplicates and malformed values are rejected.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::string& path);

/// Sets one `section.name` key from its text value.
void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value);

/// Canonical text form listing every key; parses back to the same config.
std::string format_config(const RunConfig& cfg);
std::map<std::string, std::string> config_echo(const RunConfig& cfg);
std::uint64_t config_hash(const RunConfig& cfg);

SynthConfig synth_config(const RunConfig& cfg);
ModelConfig model_config(const RunConfig& cfg, std::size_t vocab);
TrainOptions train_options(const RunConfig& cfg);
LossWeights loss_weights(const RunConfig& cfg);
DecodeConfig decode_config(const RunConfig& cfg);

}  // namespace icegen
