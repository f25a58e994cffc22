#include "doctest.h"

#include "icegen/error.hpp"
#include "icegen/physics.hpp"
#include "icegen/rng.hpp"

#include <cmath>
#include <vector>

using namespace icegen;

namespace {

std::vector<double> random_series(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(0.0, 1.0);
    return v;
}

PhysicsEnvelope test_envelope() {
    PhysicsEnvelope env;
    env.rated_kw = 2000;
    env.curve.low_kw = 0;
    env.curve.high_kw = 2000;
    env.curve.midpoint_ms = 8;
    env.curve.scale_ms = 1.2;
    env.curve.rated_kw = 2000;
    env.alpha = 0.9;
    env.ramp_up_kw = 100;
    env.ramp_down_kw = 150;
    env.relaxed_ramp_kw = 225;
    return env;
}

template <class F>
void check_fd(F&& loss, std::vector<double> p) {
    std::vector<double> g(p.size());
    loss(p, std::span<double>(g));
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double h = 1e-7;
        const double saved = p[i];
        p[i] = saved + h;
        const double up = loss(p, std::span<double>{});
        p[i] = saved - h;
        const double down = loss(p, std::span<double>{});
        p[i] = saved;
        const double fd = (up - down) / (2 * h);
        CHECK(std::abs(g[i] - fd) <= 1e-6 * std::max({std::abs(g[i]), std::abs(fd), 1e-3}));
    }
}

}  // namespace

TEST_CASE("cap hinge") {
    const std::vector<double> cap(10, 0.5);
    CHECK(cap_loss_norm(std::vector<double>(10, 0.5), cap) == 0.0);
    std::vector<double> p(10, 0.2);
    p[4] = 0.6;
    CHECK(cap_loss_norm(p, cap) == doctest::Approx(0.01).epsilon(1e-12));
    // Lowering a value already below the cap changes nothing.
    auto q = p;
    q[0] = 0.0;
    CHECK(cap_loss_norm(q, cap) == cap_loss_norm(p, cap));

    const auto r = random_series(40, 1);
    const auto c = random_series(40, 2);
    double oracle = 0.0;
    for (std::size_t t = 0; t < r.size(); ++t) oracle += std::max(r[t] - c[t], 0.0);
    CHECK(std::abs(cap_loss_norm(r, c) - oracle / 40.0) <= 1e-12);
    CHECK_THROWS_AS(cap_loss_norm(r, std::vector<double>(3, 0.0)), ShapeError);
}

TEST_CASE("cap loss in kW normalizes by rated power") {
    const PhysicsEnvelope env = test_envelope();
    const std::vector<double> wind = {8.0, 20.0};
    const std::vector<double> power = {1000.0, 1900.0};
    // Caps: 0.9 * 1000 = 900 kW and about 0.9 * 2000 = 1800 kW.
    const double cap2 = std::min(2000.0, 0.9 * env.curve.raw(20.0));
    const double expect = ((1000.0 - 900.0) + (1900.0 - cap2)) / 2000.0 / 2.0;
    CHECK(cap_loss(power, wind, env) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("ramp hinge") {
    CHECK(ramp_loss_norm(std::vector<double>(5, 0.3), 0.05, 0.05) == 0.0);
    const double up = 0.05;
    std::vector<double> p = {0.1, 0.1, 0.1 + up + 0.2, 0.1 + up + 0.2, 0.1 + up + 0.2};
    CHECK(ramp_loss_norm(p, up, 0.5) == doctest::Approx(0.008).epsilon(1e-12));

    const auto r = random_series(30, 3);
    double oracle = 0.0;
    for (std::size_t t = 1; t < r.size(); ++t) {
        const double d = r[t] - r[t - 1];
        oracle += std::pow(std::max(d - 0.1, 0.0), 2) + std::pow(std::max(-d - 0.2, 0.0), 2);
    }
    CHECK(std::abs(ramp_loss_norm(r, 0.1, 0.2) - oracle / 30.0) <= 1e-12);
    auto shifted = r;
    for (double& x : shifted) x += 0.37;
    CHECK(ramp_loss_norm(shifted, 0.1, 0.2) == doctest::Approx(ramp_loss_norm(r, 0.1, 0.2)).epsilon(1e-12));
    CHECK_THROWS_AS(ramp_loss_norm(std::vector<double>{0.1}, 0.1, 0.1), ShapeError);

    const PhysicsEnvelope env = test_envelope();
    const std::vector<double> kw = {0.0, 300.0};
    CHECK(ramp_loss(kw, env) == doctest::Approx(std::pow(200.0 / 2000.0, 2) / 2.0));
}

TEST_CASE("Huber total variation") {
    const double d = 0.05;
    CHECK(tv_loss(std::vector<double>(6, 0.4), d) == 0.0);
    CHECK(tv_loss(std::vector<double>{0.0, d, d, d}, d) == doctest::Approx(d * d / 2.0 / 4.0).epsilon(1e-12));
    CHECK(tv_loss(std::vector<double>{0.0, 3 * d, 3 * d, 3 * d}, d) == doctest::Approx(d * (3 * d - d / 2) / 4.0).epsilon(1e-12));
    // Value and slope are continuous at |z| = delta.
    const double eps = 1e-9;
    CHECK(huber(d - eps, d) == doctest::Approx(huber(d + eps, d)).epsilon(1e-7));
    CHECK(huber_derivative(d - eps, d) == doctest::Approx(huber_derivative(d + eps, d)).epsilon(1e-7));
    CHECK(huber_derivative(-d - eps, d) == doctest::Approx(huber_derivative(-d + eps, d)).epsilon(1e-7));
    const auto r = random_series(20, 5);
    auto shifted = r;
    for (double& x : shifted) x -= 0.2;
    CHECK(tv_loss(shifted, d) == doctest::Approx(tv_loss(r, d)).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences away from kinks") {
    const auto p = random_series(12, 7);
    const auto cap = random_series(12, 8);
    check_fd([&](const std::vector<double>& x, std::span<double> g) { return cap_loss_norm(x, cap, g); }, p);
    check_fd([&](const std::vector<double>& x, std::span<double> g) { return ramp_loss_norm(x, 0.1, 0.15, g); }, p);
    check_fd([&](const std::vector<double>& x, std::span<double> g) { return tv_loss(x, 0.05, g); }, p);
}

TEST_CASE("losses are non-negative") {
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto p = random_series(15, s);
        const auto c = random_series(15, s + 100);
        CHECK(cap_loss_norm(p, c) >= 0.0);
        CHECK(ramp_loss_norm(p, 0.1, 0.1) >= 0.0);
        CHECK(tv_loss(p, 0.05) >= 0.0);
    }
}

TEST_CASE("composite objective") {
    LossWeights w;
    w.lambda_cap = w.lambda_ramp = w.lambda_tv = 1.0;
    CHECK(total_loss(1, 2, 3, 4, w) == 10.0);
    w.lambda_cap = w.lambda_ramp = w.lambda_tv = 0.0;
    CHECK(total_loss(1.25, 2, 3, 4, w) == 1.25);
    Rng rng(4);
    for (int i = 0; i < 100; ++i) {
        LossWeights a;
        a.lambda_cap = rng.uniform();
        a.lambda_ramp = rng.uniform();
        a.lambda_tv = rng.uniform();
        LossWeights b = a;
        b.lambda_cap *= 2.0;
        const double ce = rng.uniform(), cap = rng.uniform(), ramp = rng.uniform(), tv = rng.uniform();
        CHECK(total_loss(ce, cap, ramp, tv, b) - total_loss(ce, cap, ramp, tv, a) == doctest::Approx(a.lambda_cap * cap));
    }
    LossWeights bad;
    bad.lambda_cap = -1.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = LossWeights{};
    bad.delta = 0.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("feasibility predicates") {
    CHECK_FALSE(exceeds_cap(0.5, 0.5));
    CHECK(exceeds_cap(std::nextafter(0.5, 1.0), 0.5));
    CHECK_FALSE(breaks_ramp(1.0, 2.0, 1.0, 1.0));
    CHECK(breaks_ramp(1.0, 2.5, 1.0, 1.0));
    CHECK(breaks_ramp(2.5, 1.0, 1.0, 1.0));
    CHECK_FALSE(breaks_ramp(2.5, 1.0, 1.0, 1.5));
}
