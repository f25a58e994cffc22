#include "doctest.h"

#include "icegen/data.hpp"
#include "icegen/error.hpp"
#include "icegen/power_curve.hpp"
#include "icegen/rng.hpp"

#include <algorithm>
#include <cmath>

using namespace icegen;

namespace {

struct Sample {
    std::vector<double> wind, power;
};

Sample logistic_sample(double a, double b, double v0, double s, std::size_t n, double noise_kw, std::uint64_t seed) {
    Rng rng(seed);
    Sample out;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = rng.uniform(0.0, 20.0);
        out.wind.push_back(v);
        out.power.push_back(a + (b - a) / (1.0 + std::exp(-(v - v0) / s)) + noise_kw * rng.normal());
    }
    return out;
}

// Grid over (v0, s) with the linear parameters solved exactly at each node (a >= 0).
double grid_search_sse(const Sample& d, double v0_lo, double v0_hi, double s_lo, double s_hi, double step) {
    double best = INFINITY;
    for (double v0 = v0_lo; v0 <= v0_hi + 1e-12; v0 += step) {
        for (double s = s_lo; s <= s_hi + 1e-12; s += step) {
            double s00 = 0, s01 = 0, s11 = 0, t0 = 0, t1 = 0;
            for (std::size_t i = 0; i < d.wind.size(); ++i) {
                const double g = 1.0 / (1.0 + std::exp(-(d.wind[i] - v0) / s));
                s00 += (1 - g) * (1 - g);
                s01 += (1 - g) * g;
                s11 += g * g;
                t0 += (1 - g) * d.power[i];
                t1 += g * d.power[i];
            }
            const double det = s00 * s11 - s01 * s01;
            double a = (t0 * s11 - t1 * s01) / det;
            double b = (s00 * t1 - s01 * t0) / det;
            if (a < 0.0) {
                // Same non-negativity constraint as the fit.
                a = 0.0;
                b = t1 / s11;
            }
            double sse = 0;
            for (std::size_t i = 0; i < d.wind.size(); ++i) {
                const double r = a + (b - a) / (1.0 + std::exp(-(d.wind[i] - v0) / s)) - d.power[i];
                sse += r * r;
            }
            best = std::min(best, sse);
        }
    }
    return best;
}

SeriesFrame power_frame(const std::vector<double>& p, double rated) {
    SeriesFrame f;
    f.rated_power_kw = rated;
    for (std::size_t i = 0; i < p.size(); ++i) f.push_row(static_cast<std::int64_t>(60 * i), {p[i], 5, 0, 0, 0, 0}, false);
    return f;
}

}  // namespace

TEST_CASE("noiseless logistic data is recovered exactly") {
    const auto d = logistic_sample(0.0, 2000.0, 9.0, 1.5, 500, 0.0, 5);
    const PowerCurve c = fit_power_curve(d.wind, d.power, 2000.0);
    CHECK(c.converged);
    CHECK(std::abs(c.low_kw) <= 1e-6 * 2000.0);
    CHECK(std::abs(c.high_kw - 2000.0) <= 1e-6 * 2000.0);
    CHECK(std::abs(c.midpoint_ms - 9.0) <= 1e-6 * 9.0);
    CHECK(std::abs(c.scale_ms - 1.5) <= 1e-6 * 1.5);
    CHECK(c.rmse_kw < 1e-6);
}

TEST_CASE("noisy fits land within 5% and match a grid-search optimum") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const auto d = logistic_sample(0.0, 2000.0, 9.0, 1.5, 2000, 20.0, seed);
        std::vector<double> trace;
        FitOptions o;
        o.cost_trace = &trace;
        const PowerCurve c = fit_power_curve(d.wind, d.power, 2000.0, o);
        INFO("seed " << seed);
        // The low plateau is zero, so it is compared against the curve span.
        CHECK(std::abs(c.low_kw) <= 0.05 * 2000.0);
        CHECK(std::abs(c.high_kw - 2000.0) <= 0.05 * 2000.0);
        CHECK(std::abs(c.midpoint_ms - 9.0) <= 0.05 * 9.0);
        CHECK(std::abs(c.scale_ms - 1.5) <= 0.05 * 1.5);
        const double sse = curve_sse(c, d.wind, d.power);
        CHECK(c.rmse_kw == doctest::Approx(std::sqrt(sse / 2000.0)).epsilon(1e-12));
        for (std::size_t k = 1; k < trace.size(); ++k) CHECK(trace[k] <= trace[k - 1]);
        if (seed <= 3) CHECK(sse <= grid_search_sse(d, 8.8, 9.2, 1.35, 1.65, 0.01) * (1.0 + 1e-12));
    }
}

TEST_CASE("degenerate fits are rejected") {
    std::vector<double> wind(60, 7.0), power(60);
    for (std::size_t i = 0; i < power.size(); ++i) power[i] = static_cast<double>(i);
    CHECK_THROWS_AS(fit_power_curve(wind, power, 2000.0), FitError);
    std::vector<double> few(49, 1.0);
    CHECK_THROWS_AS(fit_power_curve(few, few, 2000.0), InsufficientDataError);
}

TEST_CASE("synthetic non-icing rows recover the generator curve") {
    const SynthConfig sc;
    const SeriesFrame f = filter_icing(synth_icing(sc, 6000, 4), false);
    const PowerCurve c = fit_power_curve(f);
    CHECK(c.midpoint_ms == doctest::Approx(sc.curve_mid_ms).epsilon(0.05));
    CHECK(c.scale_ms == doctest::Approx(sc.curve_scale_ms).epsilon(0.1));
    CHECK(c.high_kw == doctest::Approx(sc.curve_high_kw).epsilon(0.05));
}

TEST_CASE("curve evaluation") {
    PowerCurve c;
    c.low_kw = 100;
    c.high_kw = 1900;
    c.midpoint_ms = 9;
    c.scale_ms = 1.5;
    c.rated_kw = 1800;
    CHECK(c.raw(9.0) == doctest::Approx(1000.0));
    CHECK(eval_curve(c, 9.0) == doctest::Approx(1000.0));
    CHECK(eval_curve(c, 60.0) == 1800.0);
    const double e = std::exp(1.0);
    CHECK(c.raw(10.5) == doctest::Approx(100.0 + 1800.0 * e / (1.0 + e)).epsilon(1e-14));
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        double v1 = rng.uniform(0, 25), v2 = rng.uniform(0, 25);
        if (v1 > v2) std::swap(v1, v2);
        CHECK(eval_curve(c, v1) <= eval_curve(c, v2));
        CHECK(eval_curve(c, v1) >= 0.0);
    }
}

TEST_CASE("ramp limits") {
    SUBCASE("constant power gives the floor") {
        const auto r = estimate_ramp_limits(power_frame(std::vector<double>(200, 500.0), 2000.0), 0.99);
        CHECK(r.up_kw == 1e-6 * 2000.0);
        CHECK(r.down_kw == 1e-6 * 2000.0);
    }
    SUBCASE("sawtooth") {
        std::vector<double> p;
        for (int i = 0; i < 300; ++i) p.push_back(i % 2 ? 510.0 : 500.0);
        const auto r = estimate_ramp_limits(power_frame(p, 2000.0), 0.99);
        CHECK(r.up_kw == 10.0);
        CHECK(r.down_kw == 10.0);
    }
    SUBCASE("matches a full sort of the increments") {
        const SeriesFrame f = synth_icing(SynthConfig{}, 3000, 8);
        std::vector<double> ups, downs;
        for (std::size_t i = 0; i + 1 < f.size(); ++i) {
            const double d = f[Channel::Power][i + 1] - f[Channel::Power][i];
            if (d > 0) ups.push_back(d);
            if (d < 0) downs.push_back(-d);
        }
        std::sort(ups.begin(), ups.end());
        std::sort(downs.begin(), downs.end());
        for (double q : {0.9, 0.95, 0.99}) {
            const auto r = estimate_ramp_limits(f, q);
            CHECK(r.up_kw == ups[static_cast<std::size_t>(std::ceil(q * static_cast<double>(ups.size()))) - 1]);
            CHECK(r.down_kw == downs[static_cast<std::size_t>(std::ceil(q * static_cast<double>(downs.size()))) - 1]);
        }
    }
    SUBCASE("time reversal swaps the limits; symmetric walks give near-equal limits") {
        Rng rng(12);
        std::vector<double> p{1000.0};
        for (int i = 0; i < 20000; ++i) p.push_back(p.back() + rng.normal(0.0, 15.0));
        std::vector<double> rev(p.rbegin(), p.rend());
        const auto a = estimate_ramp_limits(p, 1e9, 0.95);
        const auto b = estimate_ramp_limits(rev, 1e9, 0.95);
        CHECK(a.up_kw == b.down_kw);
        CHECK(a.down_kw == b.up_kw);
        CHECK(a.up_kw == doctest::Approx(a.down_kw).epsilon(0.05));
    }
    SUBCASE("preconditions") {
        CHECK_THROWS_AS(estimate_ramp_limits(power_frame(std::vector<double>(100, 1.0), 10.0), 0.99), InsufficientDataError);
        CHECK_THROWS_AS(estimate_ramp_limits(power_frame(std::vector<double>(300, 1.0), 10.0), 0.5), ValidationError);
    }
    SUBCASE("pairs across a segment break are skipped") {
        SeriesFrame f;
        f.rated_power_kw = 2000;
        for (int i = 0; i < 150; ++i) f.push_row(60 * i, {100.0 + (i % 2), 5, 0, 0, 0, 0}, false);
        for (int i = 0; i < 150; ++i) f.push_row(60 * (i + 1000), {1900.0 + (i % 2), 5, 0, 0, 0, 0}, false);
        const auto r = estimate_ramp_limits(f, 0.99);
        CHECK(r.up_kw == 1.0);
    }
}

TEST_CASE("envelope construction") {
    PowerCurve c;
    c.high_kw = 2000;
    c.midpoint_ms = 8;
    c.scale_ms = 1;
    c.rated_kw = 2000;
    const auto env = make_envelope(c, {100.0, 140.0}, 0.9, 1.5);
    CHECK(env.relaxed_ramp_kw == doctest::Approx(210.0));
    CHECK(cap_kw(env, 30.0) == doctest::Approx(1800.0));
    CHECK(cap_kw(env, 1.0, 30.0) == doctest::Approx(2000.0));
    CHECK_THROWS_AS(make_envelope(c, {100.0, 140.0}, 1.2, 1.5), ValidationError);
    CHECK_THROWS_AS(make_envelope(c, {100.0, 140.0}, 1.0, 0.9), ValidationError);
}
