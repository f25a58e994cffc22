#pragma once

#include "icegen/model.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace icegen {

/// One teacher-forcing window: a flattened run of whole steps.
using Window = std::vector<Token>;

/// Windows of `window_steps` whole steps taken every `stride` steps from
/// [begin_step, end_step) of `seq`, never crossing a segment start.
std::vector<Window> make_windows(const TokenSequence& seq, std::span<const std::size_t> segment_starts,
                                 std::size_t begin_step, std::size_t end_step, std::size_t window_steps,
                                 std::size_t stride);

struct TrainOptions {
    std::size_t epochs = 20;
    std::size_t batch_size = 8;
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    /// Stop after this many optimizer steps (0 = no limit).
    std::size_t max_steps = 0;
    std::size_t threads = 1;

    void validate() const;
};

struct EpochStats {
    std::size_t epoch = 0;
    std::size_t steps = 0;        // optimizer steps so far
    double train_loss = 0.0;      // mean composite loss over the epoch's batches
    double train_ce = 0.0;
    double val_loss = 0.0;        // composite loss on the validation windows, no dropout
    double val_ce = 0.0;
    double val_cap = 0.0;
};

struct TrainResult {
    ModelParams params;           // parameters of the best validation epoch
    std::vector<EpochStats> trace;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;
    std::size_t steps = 0;
};

/// Mean objective terms over a set of windows (no dropout).
ObjectiveValue mean_objective(const ModelParams& params, std::span<const Window> windows, const ObjectiveContext& ctx);

/// Adam with global-norm gradient clipping over mini-batches of windows.
/// Selection uses the validation composite loss, or the training loss when
/// there are no validation windows.
TrainResult train(ModelParams params, std::span<const Window> train_windows, std::span<const Window> val_windows,
                  const ObjectiveContext& ctx, const TrainOptions& options,
                  const std::function<void(const EpochStats&)>& on_epoch = {});

}  // namespace icegen
