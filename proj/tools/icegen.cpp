#include "icegen/config.hpp"
#include "icegen/data.hpp"
#include "icegen/error.hpp"
#include "icegen/io.hpp"
#include "icegen/pipeline.hpp"
#include "icegen/rng.hpp"
#include "icegen/text.hpp"
#include "icegen/train.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <iostream>

using namespace icegen;

namespace {

void log_line(std::string_view s) { std::cerr << s << '\n'; }

RunConfig config_from(const std::string& path, const std::vector<std::string>& overrides) {
    RunConfig cfg = path.empty() ? RunConfig{} : load_config(path);
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects section.key=value, got '" + o + "'");
        set_config_value(cfg, trim(std::string_view(o).substr(0, eq)), trim(std::string_view(o).substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

std::string report_row(ConstraintMode mode, const EvalReport& r) {
    return std::string(mode_name(mode)) + "," + format_double(r.crps) + "," + format_double(r.kld) + "," +
           format_double(r.vr_strict) + "," + format_double(r.vr_relaxed) + "," + format_double(r.diversity) + "," +
           format_double(r.projection) + "," + std::to_string(r.windows);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Physics-aware scenario generation for wind power under icing"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "Write a synthetic icing SCADA frame");
    std::size_t synth_len = 5000;
    std::uint64_t synth_seed = 7;
    double synth_rated = 2000.0;
    std::string synth_out;
    synth->add_option("--length", synth_len, "Rows (1-minute steps)");
    synth->add_option("--seed", synth_seed);
    synth->add_option("--rated", synth_rated, "Rated power in kW");
    synth->add_option("--out", synth_out)->required();

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Clean and resample a SCADA CSV");
    std::string ingest_in, ingest_out;
    double ingest_rated = 0.0;
    std::vector<std::string> ingest_map;
    ingest->add_option("--in", ingest_in)->required();
    ingest->add_option("--out", ingest_out)->required();
    ingest->add_option("--rated", ingest_rated, "Rated power in kW (default: file comment or observed maximum)");
    ingest->add_option("--map", ingest_map, "Column mapping key=header, e.g. power_kw=ActivePower");

    // fit-curve
    auto* fitc = app.add_subcommand("fit-curve", "Fit the baseline power curve and ramp limits");
    std::string fitc_in, fitc_out;
    double fitc_q = 0.99, fitc_alpha = 1.0, fitc_relaxed = 1.5;
    fitc->add_option("--in", fitc_in)->required();
    fitc->add_option("--out", fitc_out)->required();
    fitc->add_option("--ramp-quantile", fitc_q);
    fitc->add_option("--alpha", fitc_alpha);
    fitc->add_option("--relaxed-factor", fitc_relaxed);

    // fit-spec
    auto* fits = app.add_subcommand("fit-spec", "Fit tokenizer ranges and quantile edges on non-icing rows");
    std::string fits_in, fits_out;
    double fits_mu = 120.0;
    fits->add_option("--in", fits_in)->required();
    fits->add_option("--out", fits_out)->required();
    fits->add_option("--mu", fits_mu);

    // tokenize
    auto* tok = app.add_subcommand("tokenize", "Tokenize a frame into little-endian u16 ids");
    std::string tok_in, tok_spec, tok_out;
    tok->add_option("--in", tok_in)->required();
    tok->add_option("--spec", tok_spec)->required();
    tok->add_option("--out", tok_out)->required();

    // train
    auto* tr = app.add_subcommand("train", "Train the decoder on a token stream");
    std::string tr_tokens, tr_spec, tr_env, tr_out, tr_config;
    std::vector<std::string> tr_set;
    std::optional<std::size_t> tr_epochs;
    std::optional<std::uint64_t> tr_seed;
    double tr_val = 0.15;
    tr->add_option("--tokens", tr_tokens)->required();
    tr->add_option("--spec", tr_spec)->required();
    tr->add_option("--envelope", tr_env)->required();
    tr->add_option("--out", tr_out)->required();
    tr->add_option("--epochs", tr_epochs);
    tr->add_option("--seed", tr_seed);
    tr->add_option("--val-fraction", tr_val, "Trailing share of steps held out for model selection");
    tr->add_option("--config", tr_config, "Run configuration for model, train and loss settings");
    tr->add_option("--set", tr_set, "Override a config key: section.key=value");

    // generate
    auto* gen = app.add_subcommand("generate", "Sample power scenarios for the rows after a context");
    std::string gen_model, gen_ctx, gen_spec, gen_env, gen_out;
    DecodeConfig dcfg;
    std::string gen_mode = "default";
    gen->add_option("--model", gen_model)->required();
    gen->add_option("--context", gen_ctx, "CSV: context rows followed by `horizon` conditioning rows")->required();
    gen->add_option("--spec", gen_spec)->required();
    gen->add_option("--envelope", gen_env)->required();
    gen->add_option("--out", gen_out)->required();
    gen->add_option("--horizon", dcfg.horizon);
    gen->add_option("--scenarios", dcfg.scenarios);
    gen->add_option("--mode", gen_mode)->check(CLI::IsMember({"unconstrained", "default", "stricter"}));
    gen->add_option("--seed", dcfg.seed);
    gen->add_option("--temperature", dcfg.temperature);
    gen->add_option("--top-p", dcfg.top_p);
    gen->add_option("--smoothing", dcfg.smoothing_window);
    gen->add_option("--threads", dcfg.threads);
    gen->add_flag("--persistence", dcfg.persistence, "Repeat the last observed conditioning instead of reading future rows");

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "Score scenarios against realized power");
    std::string ev_scen, ev_truth, ev_env, ev_out;
    std::size_t ev_bins = 50;
    ev->add_option("--scenarios", ev_scen)->required();
    ev->add_option("--truth", ev_truth)->required();
    ev->add_option("--envelope", ev_env)->required();
    ev->add_option("--out", ev_out)->required();
    ev->add_option("--kld-bins", ev_bins);

    // sensitivity
    auto* sens = app.add_subcommand("sensitivity", "Compare constraint modes on high-volatility test windows of a run");
    std::string sens_config, sens_out;
    std::vector<std::string> sens_set;
    sens->add_option("--config", sens_config, "Configuration of a completed run");
    sens->add_option("--set", sens_set, "Override a config key: section.key=value");
    sens->add_option("--out", sens_out, "CSV output (default: <out_dir>/sensitivity.csv)");

    // config
    auto* conf = app.add_subcommand("config", "Print or check run configuration");
    bool conf_defaults = false;
    std::string conf_check;
    conf->add_flag("--defaults", conf_defaults, "Print every key with its default");
    conf->add_option("--check", conf_check, "Validate a configuration file and print it in canonical form");

    // run
    auto* run = app.add_subcommand("run", "Run the full pipeline");
    std::string run_config;
    std::vector<std::string> run_set;
    run->add_option("--config", run_config);
    run->add_option("--set", run_set, "Override a config key: section.key=value");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : exit_code(ErrorKind::Validation);
    }

    try {
        if (*synth) {
            SynthConfig sc;
            sc.rated_power_kw = synth_rated;
            sc.curve_high_kw = synth_rated;
            write_csv(synth_icing(sc, synth_len, synth_seed), synth_out);
        } else if (*ingest) {
            LoadOptions opts;
            opts.rated_power_kw = ingest_rated;
            for (const auto& m : ingest_map) {
                const auto eq = m.find('=');
                if (eq == std::string::npos) throw ValidationError("--map expects key=header, got '" + m + "'");
                opts.schema[m.substr(0, eq)] = m.substr(eq + 1);
            }
            const LoadResult lr = load_csv(ingest_in, opts);
            write_csv(lr.frame, ingest_out);
            std::cerr << "rows read " << lr.stats.rows_read << ", dropped " << lr.stats.rows_dropped << ", clipped "
                      << lr.stats.values_clipped << ", interpolated " << lr.stats.rows_interpolated << ", segments "
                      << lr.stats.segments << '\n';
        } else if (*fitc) {
            const SeriesFrame frame = load_csv(fitc_in).frame;
            const PhysicsEnvelope env = fit_envelope(frame, fitc_q, fitc_alpha, fitc_relaxed);
            save_envelope(fitc_out, env, Provenance{0, 0, {{"data", hash_file(fitc_in)}}});
            std::cerr << "curve a=" << env.curve.low_kw << " b=" << env.curve.high_kw << " v0=" << env.curve.midpoint_ms
                      << " s=" << env.curve.scale_ms << " rmse=" << env.curve.rmse_kw << " kW; ramps +" << env.ramp_up_kw
                      << "/-" << env.ramp_down_kw << " kW\n";
        } else if (*fits) {
            const SeriesFrame frame = load_csv(fits_in).frame;
            TokenizerOptions opts;
            opts.mu = fits_mu;
            const SeriesFrame normal = filter_icing(frame, false);
            const TokenizerSpec spec = fit_spec(normal, opts);
            save_spec(fits_out, spec, Provenance{0, 0, {{"data", hash_file(fits_in)}}});
            const FeatureSelection fs = select_features(normal, Channel::Power, 0.1);
            for (const auto& f : fs.retained) std::cerr << "feature " << channel_name(f.channel) << " r=" << f.correlation << '\n';
            for (Channel c : fs.zero_variance) std::cerr << "warning: " << channel_name(c) << " has zero variance\n";
        } else if (*tok) {
            const SeriesFrame frame = load_csv(tok_in).frame;
            const TokenizerSpec spec = load_spec(tok_spec).value;
            save_tokens(tok_out, tokenize(frame, spec), frame.segment_starts,
                        Provenance{0, 0, {{"data", hash_file(tok_in)}, {"spec", hash_file(tok_spec)}}});
        } else if (*tr) {
            RunConfig cfg = config_from(tr_config, tr_set);
            if (tr_epochs) cfg.epochs = *tr_epochs;
            if (tr_seed) cfg.seed = *tr_seed;
            cfg.validate();
            if (!(tr_val >= 0.0 && tr_val < 1.0)) throw ValidationError("--val-fraction must lie in [0, 1)");
            const TokenFile tf = load_tokens(tr_tokens);
            require_input(tf.provenance, "spec", hash_file(tr_spec));
            const TokenizerSpec spec = load_spec(tr_spec).value;
            const PhysicsEnvelope env = load_envelope(tr_env).value;
            const std::size_t steps = tf.sequence.steps;
            const auto val_steps = static_cast<std::size_t>(std::floor(tr_val * static_cast<double>(steps)));
            const auto train_w = make_windows(tf.sequence, tf.segment_starts, 0, steps - val_steps, cfg.context_steps, cfg.stride_steps);
            const auto val_w = make_windows(tf.sequence, tf.segment_starts, steps - val_steps, steps, cfg.context_steps, cfg.stride_steps);
            if (train_w.empty()) throw InsufficientDataError("token stream too short for one training window");
            ObjectiveContext ctx = ObjectiveContext::from(spec, env, loss_weights(cfg));
            ctx.ce_power_only = cfg.ce_power_only;
            const ModelParams init = ModelParams::init(model_config(cfg, spec.vocab_size), derive_seed(cfg.seed, "stage.model"));
            const TrainResult res = train(init, train_w, val_w, ctx, train_options(cfg), [](const EpochStats& e) {
                std::cerr << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss << " val_ce " << e.val_ce << '\n';
            });
            save_checkpoint(tr_out, res.params, CheckpointMeta{cfg.seed, config_hash(cfg), content_hash(spec), content_hash(env)});
        } else if (*gen) {
            dcfg.mode = parse_mode(gen_mode);
            dcfg.validate();
            const Checkpoint ck = load_checkpoint(gen_model);
            const TokenizerSpec spec = load_spec(gen_spec).value;
            const PhysicsEnvelope env = load_envelope(gen_env).value;
            if (ck.meta.spec_hash != content_hash(spec)) throw DataError("mixed provenance: checkpoint was trained with a different tokenizer spec");
            if (ck.meta.envelope_hash != content_hash(env)) throw DataError("mixed provenance: checkpoint was trained with a different envelope");
            const SeriesFrame frame = load_csv(gen_ctx).frame;
            const std::size_t H = dcfg.horizon;
            const std::size_t truth = dcfg.persistence ? frame.size() : (frame.size() > H ? frame.size() - H : 0);
            if (truth == 0) throw InsufficientDataError("context file needs at least one row before the horizon");
            const std::size_t max_ctx = ck.params.config.context / kChannelCount + 1 - std::min(H, ck.params.config.context / kChannelCount);
            const std::size_t ctx_steps = std::min(truth, max_ctx);
            const DecodeWindow dw = make_decode_window(frame, truth - ctx_steps, ctx_steps, H, spec, dcfg.persistence);
            ScenarioFile sf;
            sf.sets.push_back(generate(ck.params, dw, env, spec, dcfg));
            sf.truth_begin.push_back(truth);
            sf.provenance = Provenance{ck.meta.config_hash, dcfg.seed,
                                       {{"model", hash_file(gen_model)}, {"context", hash_file(gen_ctx)},
                                        {"spec", hash_file(gen_spec)}, {"envelope", hash_file(gen_env)}}};
            save_scenarios(gen_out, sf);
        } else if (*ev) {
            ScenarioFile sf = load_scenarios(ev_scen);
            const SeriesFrame truth = load_csv(ev_truth).frame;
            const auto env = load_envelope(ev_env);
            require_input(sf.provenance, "envelope", hash_file(ev_env));
            const EvalReport r = evaluate_windows(sf.sets, truth, sf.truth_begin, env.value, ev_bins);
            std::map<std::string, std::string> echo{{"metrics.kld_bins", std::to_string(ev_bins)}};
            if (!sf.sets.empty()) echo["decode.mode"] = std::string(mode_name(sf.sets.front().mode));
            save_report(ev_out, r, echo, Provenance{sf.provenance.config_hash, sf.provenance.seed,
                                                     {{"scenarios", hash_file(ev_scen)}, {"truth", hash_file(ev_truth)},
                                                      {"envelope", hash_file(ev_env)}}});
            std::cout << report_to_json(r, echo, sf.provenance);
        } else if (*sens) {
            const RunConfig cfg = config_from(sens_config, sens_set);
            const fs::path dir = cfg.out_dir;
            const Checkpoint ck = load_checkpoint(dir / "model.ckpt");
            const TokenizerSpec spec = load_spec(dir / "spec.json").value;
            const PhysicsEnvelope env = load_envelope(dir / "envelope.json").value;
            if (ck.meta.config_hash != config_hash(cfg)) throw DataError("mixed provenance: the run in " + dir.string() + " used a different configuration");
            const SeriesFrame frame = load_csv(dir / "data.csv").frame;
            const auto rows = run_sensitivity(cfg, ck.params, frame, env, spec);
            std::string out = "mode,crps,kld,vr_strict,vr_relaxed,diversity,projection_rate,windows\n";
            for (const auto& r : rows) out += report_row(r.mode, r.report) + "\n";
            write_text(sens_out.empty() ? dir / "sensitivity.csv" : fs::path(sens_out), out);
            std::cout << out;
        } else if (*conf) {
            if (!conf_check.empty()) std::cout << format_config(load_config(conf_check));
            else if (conf_defaults) std::cout << format_config(RunConfig{});
            else throw ValidationError("config needs --defaults or --check FILE");
        } else if (*run) {
            const RunConfig cfg = config_from(run_config, run_set);
            const PipelineResult res = run_pipeline(cfg, log_line);
            std::cout << read_text(fs::path(cfg.out_dir) / "report.json");
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(ErrorKind::Data);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
