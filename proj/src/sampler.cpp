#include "icegen/sampler.hpp"

#include "icegen/error.hpp"
#include "icegen/physics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <thread>

namespace icegen {

std::string_view mode_name(ConstraintMode m) {
    switch (m) {
    case ConstraintMode::Unconstrained: return "unconstrained";
    case ConstraintMode::Default: return "default";
    case ConstraintMode::Stricter: return "stricter";
    }
    return "?";
}

ConstraintMode parse_mode(std::string_view s) {
    if (s == "unconstrained") return ConstraintMode::Unconstrained;
    if (s == "default") return ConstraintMode::Default;
    if (s == "stricter") return ConstraintMode::Stricter;
    throw ValidationError("unknown constraint mode '" + std::string(s) + "'");
}

void DecodeConfig::validate() const {
    if (!(temperature > 0.0)) throw ValidationError("temperature must be positive");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw ValidationError("top_p must lie in (0, 1]");
    if (horizon == 0 || scenarios == 0) throw ValidationError("horizon and scenario count must be positive");
    if (smoothing_window == 0 || smoothing_window % 2 == 0) throw ValidationError("smoothing window must be odd and >= 1");
    if (alpha && !(*alpha > 0.0 && *alpha <= 1.0)) throw ValidationError("alpha override must lie in (0, 1]");
    if (relaxed_ramp_kw && !(*relaxed_ramp_kw > 0.0)) throw ValidationError("relaxed tolerance override must be positive");
    if (!(stricter_alpha_factor > 0.0 && stricter_alpha_factor <= 1.0)) throw ValidationError("stricter alpha factor must lie in (0, 1]");
    if (!(stricter_ramp_divisor >= 1.0)) throw ValidationError("stricter ramp divisor must be >= 1");
}

ModeLimits limits_for(const PhysicsEnvelope& env, const DecodeConfig& cfg, ConstraintMode mode) {
    ModeLimits l;
    l.alpha = cfg.alpha.value_or(env.alpha);
    l.relaxed_ramp_kw = cfg.relaxed_ramp_kw.value_or(env.relaxed_ramp_kw);
    switch (mode) {
    case ConstraintMode::Unconstrained: l.constrained = false; break;
    case ConstraintMode::Default: break;
    case ConstraintMode::Stricter:
        l.alpha *= cfg.stricter_alpha_factor;
        l.relaxed_ramp_kw /= cfg.stricter_ramp_divisor;
        break;
    }
    return l;
}

ModeLimits limits_for(const PhysicsEnvelope& env, const DecodeConfig& cfg) { return limits_for(env, cfg, cfg.mode); }

Candidates nucleus_filter(std::span<const double> probs, double temperature, double top_p, Token offset) {
    const std::size_t n = probs.size();
    std::vector<double> scaled(n, 0.0);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        if (probs[i] > 0.0) mx = std::max(mx, std::log(probs[i]) / temperature);
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (probs[i] > 0.0) {
            scaled[i] = std::exp(std::log(probs[i]) / temperature - mx);
            total += scaled[i];
        }
    }
    Candidates out;
    if (!(total > 0.0)) return out;
    for (double& s : scaled) s /= total;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scaled[a] > scaled[b]; });
    double cum = 0.0;
    for (std::size_t i : order) {
        if (scaled[i] <= 0.0) break;
        out.tokens.push_back(static_cast<Token>(offset + i));
        out.probs.push_back(scaled[i]);
        cum += scaled[i];
        if (cum >= top_p - 1e-12) break;
    }
    for (double& p : out.probs) p /= cum;
    return out;
}

Candidates prune_candidates(const Candidates& c, double p_prev, double wind_next, const PhysicsEnvelope& env,
                            const TokenizerSpec& spec, const ModeLimits& limits) {
    if (!limits.constrained) return c;
    const double cap = cap_kw(env, limits.alpha, wind_next);
    const double R = limits.relaxed_ramp_kw;
    Candidates out;
    for (std::size_t i = 0; i < c.tokens.size(); ++i) {
        const double v = mu_law_decode(c.tokens[i], spec);
        if (!exceeds_cap(v, cap) && !breaks_ramp(p_prev, v, R, R)) {
            out.tokens.push_back(c.tokens[i]);
            out.probs.push_back(c.probs[i]);
        }
    }
    return out;
}

Projection project_back(double p_prev, double wind_next, const PhysicsEnvelope& env, const TokenizerSpec& spec,
                        const ModeLimits& limits) {
    const auto& pc = spec.codec(Channel::Power);
    const double cap = cap_kw(env, limits.alpha, wind_next);
    const double R = limits.relaxed_ramp_kw;
    Projection best;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < pc.bins; ++k) {
        const auto t = static_cast<Token>(pc.offset + k);
        const double v = mu_law_decode(t, spec);
        if (exceeds_cap(v, cap) || breaks_ramp(p_prev, v, R, R)) continue;
        const double dist = std::abs(v - p_prev);
        if (dist < best_dist) {
            best_dist = dist;
            best.token = t;
        }
    }
    if (std::isfinite(best_dist)) return best;

    // Contradictory envelope: least total violation.
    best.warning = true;
    double best_violation = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < pc.bins; ++k) {
        const auto t = static_cast<Token>(pc.offset + k);
        const double v = mu_law_decode(t, spec);
        const double violation = std::max(0.0, v - cap) + std::max(0.0, std::abs(v - p_prev) - R);
        if (violation < best_violation) {
            best_violation = violation;
            best.token = t;
        }
    }
    return best;
}

DecodeWindow make_decode_window(const SeriesFrame& frame, std::size_t begin, std::size_t context_steps,
                                std::size_t horizon, const TokenizerSpec& spec, bool persistence) {
    if (context_steps == 0) throw ShapeError("decode context needs at least one step");
    const std::size_t need = begin + context_steps + (persistence ? 0 : horizon);
    if (need > frame.size()) throw ShapeError("frame too short for the decode window");
    DecodeWindow w;
    w.context = tokenize(frame, begin, begin + context_steps, spec);
    const std::size_t last = begin + context_steps - 1;
    w.last_power_kw = frame[Channel::Power][last];
    for (std::size_t h = 0; h < horizon; ++h) {
        const std::size_t row = persistence ? last : last + 1 + h;
        std::array<double, kChannelCount> values{};
        for (Channel c : kAllChannels) values[index_of(c)] = frame[c][row];
        const auto toks = tokenize_row(values, spec);
        std::array<Token, kChannelCount - 1> cond{};
        std::copy(toks.begin() + 1, toks.end(), cond.begin());
        w.future.push_back(cond);
        w.future_wind_ms.push_back(frame[Channel::WindSpeed][row]);
    }
    return w;
}

void smooth_and_project(std::span<double> p, double p_prev, std::span<const double> caps, const ModeLimits& limits,
                        double rated, std::size_t window) {
    const std::size_t H = p.size();
    if (caps.size() != H) throw ShapeError("cap series length differs from trajectory");
    if (window > 1 && H > 1) {
        const std::size_t r = window / 2;
        std::vector<double> src(p.begin(), p.end());
        for (std::size_t t = 0; t < H; ++t) {
            const std::size_t lo = t >= r ? t - r : 0;
            const std::size_t hi = std::min(H - 1, t + r);
            double s = 0.0;
            for (std::size_t k = lo; k <= hi; ++k) s += src[k];
            p[t] = s / static_cast<double>(hi - lo + 1);
        }
    }
    if (!limits.constrained) {
        for (double& v : p) v = std::clamp(v, 0.0, rated);
        return;
    }
    const double R = limits.relaxed_ramp_kw;
    // Highest value at step t from which every later cap stays reachable.
    std::vector<double> reach(H);
    reach[H - 1] = std::min(caps[H - 1], rated);
    for (std::size_t t = H - 1; t-- > 0;) {
        reach[t] = std::min({caps[t], rated, reach[t + 1] + R});
        while (reach[t] - reach[t + 1] > R) reach[t] = std::nextafter(reach[t], -std::numeric_limits<double>::infinity());
    }

    double prev = p_prev;
    for (std::size_t t = 0; t < H; ++t) {
        const double hi = std::min(reach[t], prev + R);
        const double lo = std::min(std::max(0.0, prev - R), hi);
        double v = std::clamp(p[t], lo, hi);
        if (t > 0) {
            // Rounding in prev +/- R can leave the value an ulp outside the band.
            for (int guard = 0; guard < 64; ++guard) {
                if (v - prev > R || exceeds_cap(v, caps[t])) v = std::nextafter(v, -std::numeric_limits<double>::infinity());
                else if (prev - v > R) v = std::nextafter(v, std::numeric_limits<double>::infinity());
                else break;
            }
        } else {
            while (exceeds_cap(v, caps[t])) v = std::nextafter(v, -std::numeric_limits<double>::infinity());
        }
        p[t] = std::max(v, 0.0);
        prev = p[t];
    }
}

ScenarioSet generate(const ModelParams& params, const DecodeWindow& window, const PhysicsEnvelope& env,
                     const TokenizerSpec& spec, const DecodeConfig& cfg) {
    cfg.validate();
    const std::size_t H = cfg.horizon;
    const std::size_t M = cfg.scenarios;
    const std::size_t C = kChannelCount;
    if (window.future.size() < H || window.future_wind_ms.size() < H)
        throw ShapeError("conditioning covers " + std::to_string(window.future.size()) + " steps, horizon is " + std::to_string(H));
    if (window.context.steps == 0) throw ShapeError("empty decode context");
    if (params.config.vocab != spec.vocab_size) throw ValidationError("model vocabulary does not match the tokenizer spec");

    const std::size_t max_steps = params.config.context / C;
    if (max_steps < H) throw DecodeError("model context too short for the horizon");
    const std::size_t keep = std::min(window.context.steps, max_steps - (H - 1));
    const auto ctx_tokens = std::span<const Token>(window.context.tokens).last(keep * C);

    const ModeLimits limits = limits_for(env, cfg);
    const auto& pc = spec.codec(Channel::Power);
    std::vector<double> caps(H);
    for (std::size_t h = 0; h < H; ++h) caps[h] = cap_kw(env, limits.alpha, window.future_wind_ms[h]);

    Decoder base(params);
    base.append(ctx_tokens);

    ScenarioSet out;
    out.scenarios = M;
    out.horizon = H;
    out.power_kw.assign(M * H, 0.0);
    out.projected.assign(M * H, 0);
    out.warnings.assign(M * H, 0);
    out.wind_ms.assign(window.future_wind_ms.begin(), window.future_wind_ms.begin() + static_cast<std::ptrdiff_t>(H));
    out.rated_kw = env.rated_kw;
    out.last_power_kw = window.last_power_kw;
    out.mode = cfg.mode;
    out.seed = cfg.seed;

    auto run_scenario = [&](std::size_t m) {
        Rng rng(cfg.seed, "decode.scenario", m);
        Decoder dec = base;
        double p_prev = window.last_power_kw;
        for (std::size_t h = 0; h < H; ++h) {
            const Eigen::VectorXd& o = dec.distribution();
            std::vector<double> power(pc.bins);
            double mass = 0.0;
            for (std::size_t k = 0; k < pc.bins; ++k) {
                power[k] = o[static_cast<Eigen::Index>(pc.offset + k)];
                mass += power[k];
            }
            if (!(mass > 0.0) || !std::isfinite(mass)) throw DecodeError("model assigns no mass to power tokens");
            for (double& v : power) v /= mass;

            const Candidates cand = nucleus_filter(power, cfg.temperature, cfg.top_p, static_cast<Token>(pc.offset));
            const Candidates feasible = prune_candidates(cand, p_prev, window.future_wind_ms[h], env, spec, limits);
            Token token;
            if (feasible.tokens.empty()) {
                const Projection pr = project_back(p_prev, window.future_wind_ms[h], env, spec, limits);
                token = pr.token;
                out.projected[m * H + h] = 1;
                out.warnings[m * H + h] = pr.warning ? 1 : 0;
            } else {
                const double total = std::accumulate(feasible.probs.begin(), feasible.probs.end(), 0.0);
                const double u = rng.uniform() * total;
                double cum = 0.0;
                token = feasible.tokens.back();
                for (std::size_t i = 0; i < feasible.tokens.size(); ++i) {
                    cum += feasible.probs[i];
                    if (u < cum) {
                        token = feasible.tokens[i];
                        break;
                    }
                }
            }
            const double value = mu_law_decode(token, spec);
            out.power_kw[m * H + h] = value;
            p_prev = value;
            if (h + 1 < H) {
                std::array<Token, kChannelCount> step{};
                step[0] = token;
                std::copy(window.future[h].begin(), window.future[h].end(), step.begin() + 1);
                dec.append(step);
            }
        }
        smooth_and_project(std::span<double>(out.power_kw).subspan(m * H, H), window.last_power_kw, caps, limits,
                           env.rated_kw, cfg.smoothing_window);
    };

    const std::size_t threads = std::clamp<std::size_t>(cfg.threads, 1, M);
    if (threads == 1) {
        for (std::size_t m = 0; m < M; ++m) run_scenario(m);
    } else {
        // Each scenario owns its RNG stream and output row, so the split does not affect results.
        std::vector<std::exception_ptr> errors(threads);
        {
            std::vector<std::jthread> pool;
            for (std::size_t t = 0; t < threads; ++t) {
                pool.emplace_back([&, t] {
                    try {
                        for (std::size_t m = t; m < M; m += threads) run_scenario(m);
                    } catch (...) {
                        errors[t] = std::current_exception();
                    }
                });
            }
        }
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }
    return out;
}

}  // namespace icegen
