#include <doctest.h>

#include "icegen/error.hpp"
#include "icegen/train.hpp"
#include "tiny_model.hpp"

#include <cmath>

using namespace icegen;
using namespace icegen::testing;

namespace {

TokenSequence counting_sequence(std::size_t steps) {
    TokenSequence seq;
    seq.steps = steps;
    for (std::size_t i = 0; i < steps * TokenSequence::channels; ++i) seq.tokens.push_back(static_cast<Token>(i % 60000));
    return seq;
}

LossWeights no_physics() {
    LossWeights w;
    w.lambda_cap = w.lambda_ramp = w.lambda_tv = 0.0;
    return w;
}

}  // namespace

TEST_CASE("windows respect stride, range and segment starts") {
    const auto seq = counting_sequence(40);
    const std::size_t C = TokenSequence::channels;
    const std::vector<std::size_t> starts = {0, 17};
    const auto w = make_windows(seq, starts, 2, 35, 5, 3);
    // Segment [2, 17): starts 2, 5, 8, 11; segment [17, 35): 17, 20, 23, 26, 29.
    const std::vector<std::size_t> expect = {2, 5, 8, 11, 17, 20, 23, 26, 29};
    REQUIRE(w.size() == expect.size());
    for (std::size_t i = 0; i < w.size(); ++i) {
        CHECK(w[i].size() == 5 * C);
        CHECK(w[i].front() == expect[i] * C);
        const std::size_t first = expect[i], last = expect[i] + 4;
        CHECK_FALSE((first < 17 && last >= 17));
    }
    CHECK(make_windows(seq, starts, 0, 40, 50, 1).empty());
    CHECK_THROWS_AS(make_windows(seq, starts, 0, 40, 0, 1), ValidationError);
    CHECK_THROWS_AS(make_windows(seq, starts, 0, 40, 5, 0), ValidationError);
}

TEST_CASE("option validation") {
    TrainOptions o;
    CHECK_NOTHROW(o.validate());
    o.learning_rate = 0.0;
    CHECK_THROWS_AS(o.validate(), ValidationError);
    o = {};
    o.beta2 = 1.0;
    CHECK_THROWS_AS(o.validate(), ValidationError);
    o = {};
    o.batch_size = 0;
    CHECK_THROWS_AS(o.validate(), ValidationError);
}

TEST_CASE("mean objective averages the per-window terms") {
    const auto ctx = tiny_context(LossWeights{});
    const ModelParams p = tiny_params(3);
    std::vector<Window> windows = {tiny_window(), tiny_window()};
    // Same steps in reverse order.
    for (std::size_t t = 0; t < 12; t += 2) {
        windows[1][t] = windows[0][10 - t];
        windows[1][t + 1] = windows[0][11 - t];
    }
    const auto a = evaluate_objective(p, windows[0], ctx);
    const auto b = evaluate_objective(p, windows[1], ctx);
    const auto m = mean_objective(p, windows, ctx);
    CHECK(m.total == doctest::Approx((a.total + b.total) / 2).epsilon(1e-13));
    CHECK(m.ce == doctest::Approx((a.ce + b.ce) / 2).epsilon(1e-13));
}

TEST_CASE("a single window is memorized") {
    const auto ctx = tiny_context(no_physics());
    const std::vector<Window> windows = {tiny_window()};
    TrainOptions o;
    o.epochs = 500;
    o.batch_size = 1;
    o.learning_rate = 1e-2;
    o.seed = 1;
    const auto r = train(ModelParams::init(tiny_config(), 2), windows, {}, ctx, o);
    CHECK(r.steps == 500);
    CHECK(mean_objective(r.params, windows, ctx).ce < 0.1);
}

TEST_CASE("training is deterministic and keeps the best validation epoch") {
    const auto ctx = tiny_context(LossWeights{});
    std::vector<Window> train_w, val_w;
    Rng rng(5);
    for (int i = 0; i < 6; ++i) {
        Window w = tiny_window();
        for (std::size_t t = 0; t < w.size(); t += 2) w[t] = static_cast<Token>(rng.below(kTinyPowerBins));
        (i < 4 ? train_w : val_w).push_back(w);
    }
    TrainOptions o;
    o.epochs = 15;
    o.batch_size = 2;
    o.learning_rate = 5e-3;
    o.seed = 9;
    ModelConfig c = tiny_config();
    c.dropout = 0.1;
    std::size_t calls = 0;
    const auto a = train(ModelParams::init(c, 4), train_w, val_w, ctx, o, [&](const EpochStats&) { ++calls; });
    const auto b = train(ModelParams::init(c, 4), train_w, val_w, ctx, o);
    CHECK(calls == o.epochs);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].train_loss == b.trace[i].train_loss);
        CHECK(a.trace[i].val_loss == b.trace[i].val_loss);
    }
    double best = a.trace.front().val_loss;
    for (const auto& e : a.trace) best = std::min(best, e.val_loss);
    CHECK(a.best_val_loss == best);
    CHECK(a.trace[a.best_epoch].val_loss == best);
    ModelParams eval = a.params;
    eval.config.dropout = 0.0;
    CHECK(mean_objective(eval, val_w, ctx).total == doctest::Approx(best).epsilon(1e-12));
    CHECK(a.trace.back().val_loss < a.trace.front().val_loss);
}

TEST_CASE("the step limit stops training early") {
    const auto ctx = tiny_context(LossWeights{});
    const std::vector<Window> windows(5, tiny_window());
    TrainOptions o;
    o.epochs = 10;
    o.batch_size = 2;
    o.max_steps = 7;
    const auto r = train(ModelParams::init(tiny_config(), 1), windows, {}, ctx, o);
    CHECK(r.steps == 7);
}
