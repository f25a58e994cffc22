#include "icegen/pipeline.hpp"

#include "icegen/error.hpp"
#include "icegen/rng.hpp"
#include "icegen/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace icegen {

using json = nlohmann::ordered_json;

PhysicsEnvelope fit_envelope(const SeriesFrame& train_rows, double ramp_quantile, double alpha, double relaxed_factor) {
    const SeriesFrame normal = filter_icing(train_rows, false);
    const PowerCurve curve = fit_power_curve(normal);
    const RampLimits ramps = estimate_ramp_limits(train_rows, ramp_quantile);
    return make_envelope(curve, ramps, alpha, relaxed_factor);
}

std::vector<std::size_t> candidate_windows(const SeriesFrame& frame, std::size_t begin, std::size_t end,
                                           std::size_t context_steps, std::size_t horizon) {
    std::vector<std::size_t> out;
    end = std::min(end, frame.size());
    for (std::size_t t = begin; t + horizon <= end; t += horizon) {
        if (t < context_steps) continue;
        const std::size_t first = t - context_steps;
        if (frame.segment_of(first) == frame.segment_of(t + horizon - 1)) out.push_back(t);
    }
    return out;
}

std::vector<std::size_t> spread_windows(const std::vector<std::size_t>& candidates, std::size_t count) {
    if (candidates.size() <= count) return candidates;
    std::vector<std::size_t> out;
    if (count == 1) return {candidates[candidates.size() / 2]};
    for (std::size_t i = 0; i < count; ++i) out.push_back(candidates[i * (candidates.size() - 1) / (count - 1)]);
    return out;
}

std::vector<std::size_t> volatile_windows(const SeriesFrame& frame, const std::vector<std::size_t>& candidates,
                                          std::size_t horizon, double quantile) {
    if (candidates.empty()) return {};
    std::vector<double> var(candidates.size());
    const auto& p = frame[Channel::Power];
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        double mean = 0.0;
        for (std::size_t h = 0; h < horizon; ++h) mean += p[candidates[i] + h];
        mean /= static_cast<double>(horizon);
        for (std::size_t h = 0; h < horizon; ++h) var[i] += (p[candidates[i] + h] - mean) * (p[candidates[i] + h] - mean);
        var[i] /= static_cast<double>(horizon);
    }
    std::vector<double> sorted = var;
    std::sort(sorted.begin(), sorted.end());
    const auto rank = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(sorted.size())));
    const double threshold = sorted[rank == 0 ? 0 : std::min(rank, sorted.size()) - 1];
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < candidates.size(); ++i)
        if (var[i] >= threshold) out.push_back(candidates[i]);
    return out;
}

std::vector<ScenarioSet> generate_windows(const ModelParams& params, const SeriesFrame& frame,
                                          const std::vector<std::size_t>& truth_begin, std::size_t context_steps,
                                          const PhysicsEnvelope& env, const TokenizerSpec& spec, const DecodeConfig& cfg) {
    std::vector<ScenarioSet> sets;
    for (std::size_t w = 0; w < truth_begin.size(); ++w) {
        if (truth_begin[w] < context_steps) throw ShapeError("window starts before its context");
        DecodeConfig c = cfg;
        c.seed = derive_seed(cfg.seed, "decode.window", w);
        const DecodeWindow dw =
            make_decode_window(frame, truth_begin[w] - context_steps, context_steps, cfg.horizon, spec, cfg.persistence);
        sets.push_back(generate(params, dw, env, spec, c));
    }
    return sets;
}

EvalReport evaluate_windows(std::vector<ScenarioSet>& sets, const SeriesFrame& frame,
                            const std::vector<std::size_t>& truth_begin, const PhysicsEnvelope& env, std::size_t kld_bins) {
    if (sets.size() != truth_begin.size()) throw ShapeError("one truth row is needed per scenario window");
    std::vector<std::vector<double>> truths;
    for (std::size_t w = 0; w < sets.size(); ++w) {
        ScenarioSet& s = sets[w];
        const std::size_t b = truth_begin[w];
        if (b + s.horizon > frame.size()) throw ShapeError("truth frame ends before window " + std::to_string(w));
        const auto& p = frame[Channel::Power];
        const auto& v = frame[Channel::WindSpeed];
        truths.emplace_back(p.begin() + static_cast<std::ptrdiff_t>(b), p.begin() + static_cast<std::ptrdiff_t>(b + s.horizon));
        s.wind_ms.assign(v.begin() + static_cast<std::ptrdiff_t>(b), v.begin() + static_cast<std::ptrdiff_t>(b + s.horizon));
        s.rated_kw = env.rated_kw;
    }
    return evaluate(sets, truths, env, kld_bins);
}

std::size_t decode_context_steps(const RunConfig& cfg) { return cfg.context_steps - cfg.horizon + 1; }

void require_input(const Provenance& prov, const std::string& name, std::uint64_t actual) {
    const auto it = prov.inputs.find(name);
    if (it != prov.inputs.end() && it->second != actual)
        throw DataError("mixed provenance: artifact was built from a different " + name + " (" + hex64(it->second) +
                        " vs " + hex64(actual) + ")");
}

namespace {

struct Manifest {
    fs::path dir;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    json artifacts = json::array();
    json extra = json::object();

    void add(const std::string& name) {
        artifacts.push_back({{"name", name}, {"hash", hex64(hash_file(dir / name))}});
    }
    void write(const std::string& status, const std::string& stage = {}, const std::string& error = {}) const {
        json j;
        j["kind"] = "run_manifest";
        j["status"] = status;
        j["config_hash"] = hex64(config_hash);
        j["seed"] = seed;
        if (!stage.empty()) j["failed_stage"] = stage;
        if (!error.empty()) j["error"] = error;
        json a = artifacts;
        for (auto& x : a) x["stale"] = status != "complete";
        j["artifacts"] = a;
        for (const auto& [k, v] : extra.items()) j[k] = v;
        write_text(dir / "manifest.json", j.dump(2) + "\n");
    }
};

}  // namespace

PipelineResult run_pipeline(const RunConfig& cfg, const Logger& log) {
    cfg.validate();
    const fs::path dir = cfg.out_dir;
    fs::create_directories(dir);
    const std::uint64_t chash = config_hash(cfg);
    const std::uint64_t seed = cfg.seed;
    auto say = [&](const std::string& s) {
        if (log) log(s);
    };
    auto stamp = [&](std::map<std::string, std::uint64_t> inputs) { return Provenance{chash, seed, std::move(inputs)}; };

    Manifest manifest{dir, chash, seed};
    manifest.write("running");
    write_text(dir / "config.txt", format_config(cfg));

    PipelineResult result;
    std::string stage;
    try {
        stage = cfg.input.empty() ? "synth" : "ingest";
        SeriesFrame frame;
        if (cfg.input.empty()) {
            frame = synth_icing(synth_config(cfg), cfg.synth_length, derive_seed(seed, "stage.synth"));
        } else {
            const LoadResult lr = load_csv(cfg.input);
            frame = lr.frame;
            say("ingest: " + std::to_string(lr.stats.rows_read) + " rows read, " + std::to_string(lr.stats.rows_dropped) +
                " dropped, " + std::to_string(lr.stats.values_clipped) + " clipped, " +
                std::to_string(lr.stats.rows_interpolated) + " interpolated");
        }
        write_csv(frame, dir / "data.csv");
        manifest.add("data.csv");
        const std::uint64_t data_hash = hash_file(dir / "data.csv");
        const SplitIndex split = chrono_split(frame, {cfg.train_fraction, cfg.val_fraction, cfg.test_fraction});
        const SeriesFrame train_rows = slice(frame, split.train.first, split.train.second);
        say(stage + ": " + std::to_string(frame.size()) + " rows, split " + std::to_string(split.train.second) + "/" +
            std::to_string(split.val.second - split.val.first) + "/" + std::to_string(split.test.second - split.test.first));

        stage = "fit-curve";
        const PhysicsEnvelope env = fit_envelope(train_rows, cfg.ramp_quantile, cfg.alpha, cfg.relaxed_factor);
        save_envelope(dir / "envelope.json", env, stamp({{"data", data_hash}}));
        manifest.add("envelope.json");
        say("fit-curve: midpoint " + std::to_string(env.curve.midpoint_ms) + " m/s, rmse " +
            std::to_string(env.curve.rmse_kw) + " kW, ramps +" + std::to_string(env.ramp_up_kw) + "/-" +
            std::to_string(env.ramp_down_kw) + " kW");

        stage = "fit-spec";
        const SeriesFrame normal = filter_icing(train_rows, false);
        result.features = select_features(normal, Channel::Power, cfg.feature_threshold);
        TokenizerOptions topts;
        topts.mu = cfg.mu;
        const TokenizerSpec spec = fit_spec(normal, topts);
        save_spec(dir / "spec.json", spec, stamp({{"data", data_hash}}));
        manifest.add("spec.json");
        json feats = json::array();
        for (const auto& f : result.features.retained)
            feats.push_back({{"channel", std::string(channel_name(f.channel))}, {"correlation", f.correlation}});
        manifest.extra["selected_features"] = feats;

        stage = "tokenize";
        const TokenSequence seq = tokenize(frame, spec);
        const std::uint64_t spec_file = hash_file(dir / "spec.json");
        save_tokens(dir / "tokens.bin", seq, frame.segment_starts, stamp({{"data", data_hash}, {"spec", spec_file}}));
        manifest.add("tokens.bin");
        manifest.add("tokens.bin.json");

        stage = "train";
        const ModelConfig mcfg = model_config(cfg, spec.vocab_size);
        const auto train_w = make_windows(seq, frame.segment_starts, split.train.first, split.train.second,
                                          cfg.context_steps, cfg.stride_steps);
        const auto val_w = make_windows(seq, frame.segment_starts, split.val.first, split.val.second, cfg.context_steps,
                                        cfg.stride_steps);
        if (train_w.empty()) throw InsufficientDataError("no training windows fit in the training split");
        LossWeights weights = loss_weights(cfg);
        ObjectiveContext ctx = ObjectiveContext::from(spec, env, weights);
        ctx.ce_power_only = cfg.ce_power_only;
        const ModelParams init = ModelParams::init(mcfg, derive_seed(seed, "stage.model"));
        say("train: " + std::to_string(train_w.size()) + " windows, " + std::to_string(val_w.size()) +
            " validation windows, " + std::to_string(init.parameter_count()) + " parameters");
        result.training = train(init, train_w, val_w, ctx, train_options(cfg), [&](const EpochStats& e) {
            say("  epoch " + std::to_string(e.epoch) + " train " + std::to_string(e.train_loss) + " val " +
                std::to_string(e.val_loss) + " val_ce " + std::to_string(e.val_ce));
        });
        CheckpointMeta meta{seed, chash, content_hash(spec), content_hash(env)};
        save_checkpoint(dir / "model.ckpt", result.training.params, meta);
        manifest.add("model.ckpt");
        json trace = json::array();
        for (const auto& e : result.training.trace)
            trace.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}, {"val_ce", e.val_ce}});
        manifest.extra["training"] = {{"best_epoch", result.training.best_epoch}, {"trace", trace}};

        stage = "generate";
        // Decode from the stored weights so a later `generate` reproduces this run.
        const Checkpoint ck = load_checkpoint(dir / "model.ckpt");
        const std::size_t ctx_steps = decode_context_steps(cfg);
        const auto cands = candidate_windows(frame, split.test.first, split.test.second, ctx_steps, cfg.horizon);
        if (cands.empty()) throw InsufficientDataError("no decode window fits in the test split");
        const auto starts = spread_windows(cands, cfg.windows);
        ScenarioFile sf;
        sf.sets = generate_windows(ck.params, frame, starts, ctx_steps, env, spec, decode_config(cfg));
        sf.truth_begin = starts;
        sf.provenance = stamp({{"data", data_hash}, {"model", hash_file(dir / "model.ckpt")},
                               {"envelope", hash_file(dir / "envelope.json")}, {"spec", spec_file}});
        save_scenarios(dir / "scenarios.csv", sf);
        manifest.add("scenarios.csv");
        say("generate: " + std::to_string(starts.size()) + " windows x " + std::to_string(cfg.scenarios) + " scenarios");

        stage = "evaluate";
        result.report = evaluate_windows(sf.sets, frame, starts, env, cfg.kld_bins);
        save_report(dir / "report.json", result.report, config_echo(cfg),
                    stamp({{"scenarios", hash_file(dir / "scenarios.csv")}, {"data", data_hash},
                           {"envelope", hash_file(dir / "envelope.json")}}));
        manifest.add("report.json");
        say("evaluate: crps " + std::to_string(result.report.crps) + " kld " + std::to_string(result.report.kld) +
            " vr_strict " + std::to_string(result.report.vr_strict) + "% projection " +
            std::to_string(result.report.projection) + "%");
    } catch (const Error& e) {
        manifest.write("failed", stage, e.what());
        throw Error(e.kind(), "stage " + stage + ": " + e.what());
    } catch (const std::exception& e) {
        manifest.write("failed", stage, e.what());
        throw Error(ErrorKind::Data, "stage " + stage + ": " + e.what());
    }
    for (const auto& a : manifest.artifacts) result.artifacts.push_back(a["name"].get<std::string>());
    manifest.write("complete");
    return result;
}

std::vector<SensitivityRow> run_sensitivity(const RunConfig& cfg, const ModelParams& params, const SeriesFrame& frame,
                                            const PhysicsEnvelope& env, const TokenizerSpec& spec) {
    const SplitIndex split = chrono_split(frame, {cfg.train_fraction, cfg.val_fraction, cfg.test_fraction});
    const std::size_t ctx_steps = decode_context_steps(cfg);
    const auto cands = candidate_windows(frame, split.test.first, split.test.second, ctx_steps, cfg.horizon);
    if (cands.empty()) throw InsufficientDataError("no decode window fits in the test split");
    const auto starts = spread_windows(volatile_windows(frame, cands, cfg.horizon, cfg.volatility_quantile), cfg.windows);
    std::vector<SensitivityRow> rows;
    for (ConstraintMode mode : {ConstraintMode::Unconstrained, ConstraintMode::Default, ConstraintMode::Stricter}) {
        DecodeConfig d = decode_config(cfg);
        d.mode = mode;
        auto sets = generate_windows(params, frame, starts, ctx_steps, env, spec, d);
        rows.push_back({mode, evaluate_windows(sets, frame, starts, env, cfg.kld_bins)});
    }
    return rows;
}

}  // namespace icegen
