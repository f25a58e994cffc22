#include "icegen/train.hpp"

#include "icegen/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

namespace icegen {

std::vector<Window> make_windows(const TokenSequence& seq, std::span<const std::size_t> segment_starts,
                                 std::size_t begin_step, std::size_t end_step, std::size_t window_steps,
                                 std::size_t stride) {
    if (window_steps < 1 || stride < 1) throw ValidationError("window length and stride must be positive");
    const std::size_t C = TokenSequence::channels;
    end_step = std::min(end_step, seq.steps);
    std::vector<Window> out;
    // Segment boundaries clipped to the requested range.
    std::vector<std::size_t> cuts{begin_step};
    for (std::size_t s : segment_starts) {
        if (s > begin_step && s < end_step) cuts.push_back(s);
    }
    cuts.push_back(end_step);
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
        for (std::size_t s = cuts[c]; s + window_steps <= cuts[c + 1]; s += stride) {
            out.emplace_back(seq.tokens.begin() + static_cast<std::ptrdiff_t>(s * C),
                             seq.tokens.begin() + static_cast<std::ptrdiff_t>((s + window_steps) * C));
        }
    }
    return out;
}

void TrainOptions::validate() const {
    if (epochs == 0 || batch_size == 0) throw ValidationError("epochs and batch size must be positive");
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("Adam betas must lie in [0, 1)");
    if (!(epsilon > 0.0) || !(clip_norm > 0.0)) throw ValidationError("epsilon and clip norm must be positive");
}

ObjectiveValue mean_objective(const ModelParams& params, std::span<const Window> windows, const ObjectiveContext& ctx) {
    ObjectiveValue sum;
    for (const auto& w : windows) {
        const auto v = evaluate_objective(params, w, ctx);
        sum.total += v.total;
        sum.ce += v.ce;
        sum.cap += v.cap;
        sum.ramp += v.ramp;
        sum.tv += v.tv;
        sum.targets += v.targets;
    }
    if (!windows.empty()) {
        const double n = static_cast<double>(windows.size());
        sum.total /= n;
        sum.ce /= n;
        sum.cap /= n;
        sum.ramp /= n;
        sum.tv /= n;
    }
    return sum;
}

namespace {

void zero(ModelParams& p) {
    for (auto& t : p.tensors()) t.value->setZero();
}

}  // namespace

TrainResult train(ModelParams params, std::span<const Window> train_windows, std::span<const Window> val_windows,
                  const ObjectiveContext& ctx, const TrainOptions& opt,
                  const std::function<void(const EpochStats&)>& on_epoch) {
    opt.validate();
    if (train_windows.empty()) throw InsufficientDataError("no training windows");
    const ModelConfig& cfg = params.config;

    ModelParams m1 = ModelParams::zeros(cfg);
    ModelParams m2 = ModelParams::zeros(cfg);
    ModelParams grad = ModelParams::zeros(cfg);
    const std::size_t batch = std::min(opt.batch_size, train_windows.size());
    std::vector<ModelParams> per_window(batch, ModelParams::zeros(cfg));

    TrainResult result;
    result.params = params;
    result.best_val_loss = std::numeric_limits<double>::infinity();

    std::vector<std::size_t> order(train_windows.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t step = 0;
    bool stop = false;

    for (std::size_t epoch = 0; epoch < opt.epochs && !stop; ++epoch) {
        Rng shuffle_rng(opt.seed, "train.shuffle", epoch);
        for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        double loss_sum = 0.0, ce_sum = 0.0;
        std::size_t loss_count = 0;
        for (std::size_t b0 = 0; b0 < order.size() && !stop; b0 += batch) {
            const std::size_t nb = std::min(batch, order.size() - b0);
            std::vector<ObjectiveValue> values(nb);
            // Per-window gradients are summed in window order, so results do not depend on the thread count.
            auto work = [&](std::size_t first, std::size_t last) {
                for (std::size_t j = first; j < last; ++j) {
                    zero(per_window[j]);
                    Rng drop_rng(opt.seed, "train.dropout", step * 65536 + j);
                    values[j] = accumulate_gradients(params, train_windows[order[b0 + j]], ctx, per_window[j],
                                                     cfg.dropout, &drop_rng);
                }
            };
            const std::size_t threads = std::clamp<std::size_t>(opt.threads, 1, nb);
            if (threads == 1) {
                work(0, nb);
            } else {
                std::vector<std::jthread> pool;
                const std::size_t chunk = (nb + threads - 1) / threads;
                for (std::size_t t = 0; t < threads; ++t) {
                    const std::size_t first = t * chunk;
                    const std::size_t last = std::min(nb, first + chunk);
                    if (first < last) pool.emplace_back(work, first, last);
                }
            }

            zero(grad);
            auto gt = grad.tensors();
            for (std::size_t j = 0; j < nb; ++j) {
                auto wt = per_window[j].tensors();
                for (std::size_t k = 0; k < gt.size(); ++k) *gt[k].value += *wt[k].value;
                loss_sum += values[j].total;
                ce_sum += values[j].ce;
                ++loss_count;
            }
            double norm2 = 0.0;
            for (auto& t : gt) {
                *t.value /= static_cast<double>(nb);
                norm2 += t.value->squaredNorm();
            }
            const double norm = std::sqrt(norm2);
            if (!std::isfinite(norm)) throw TrainingError("non-finite gradient at optimizer step " + std::to_string(step));
            const double clip = norm > opt.clip_norm ? opt.clip_norm / norm : 1.0;

            ++step;
            const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
            auto pt = params.tensors();
            auto t1 = m1.tensors();
            auto t2 = m2.tensors();
            for (std::size_t k = 0; k < pt.size(); ++k) {
                const Mat g = *gt[k].value * clip;
                *t1[k].value = opt.beta1 * *t1[k].value + (1.0 - opt.beta1) * g;
                *t2[k].value = opt.beta2 * *t2[k].value + (1.0 - opt.beta2) * g.cwiseProduct(g);
                pt[k].value->array() -= opt.learning_rate * (t1[k].value->array() / bc1) /
                                        ((t2[k].value->array() / bc2).sqrt() + opt.epsilon);
            }
            if (opt.max_steps && step >= opt.max_steps) stop = true;
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.steps = step;
        stats.train_loss = loss_sum / static_cast<double>(std::max<std::size_t>(1, loss_count));
        stats.train_ce = ce_sum / static_cast<double>(std::max<std::size_t>(1, loss_count));
        if (!std::isfinite(stats.train_loss)) throw TrainingError("training loss diverged in epoch " + std::to_string(epoch));
        if (!val_windows.empty()) {
            const auto v = mean_objective(params, val_windows, ctx);
            stats.val_loss = v.total;
            stats.val_ce = v.ce;
            stats.val_cap = v.cap;
        } else {
            stats.val_loss = stats.train_loss;
            stats.val_ce = stats.train_ce;
        }
        result.trace.push_back(stats);
        if (on_epoch) on_epoch(stats);
        if (stats.val_loss < result.best_val_loss) {
            result.best_val_loss = stats.val_loss;
            result.best_epoch = epoch;
            result.params = params;
        }
    }
    result.steps = step;
    return result;
}

}  // namespace icegen
