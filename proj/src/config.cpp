#include "icegen/config.hpp"

#include "icegen/error.hpp"
#include "icegen/io.hpp"
#include "icegen/rng.hpp"
#include "icegen/text.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <set>
#include <variant>
#include <vector>

namespace icegen {

namespace {

using Field = std::variant<std::size_t RunConfig::*, double RunConfig::*,
                           bool RunConfig::*, std::string RunConfig::*, ConstraintMode RunConfig::*>;

struct Key {
    const char* name;
    Field field;
};

// Declaration order is the canonical print order.
const std::vector<Key>& keys() {
    static const std::vector<Key> k = {
        {"run.seed", &RunConfig::seed},
        {"run.out_dir", &RunConfig::out_dir},
        {"run.threads", &RunConfig::threads},
        {"data.input", &RunConfig::input},
        {"data.synth_length", &RunConfig::synth_length},
        {"data.synth_rated_kw", &RunConfig::synth_rated_kw},
        {"data.train_fraction", &RunConfig::train_fraction},
        {"data.val_fraction", &RunConfig::val_fraction},
        {"data.test_fraction", &RunConfig::test_fraction},
        {"data.feature_threshold", &RunConfig::feature_threshold},
        {"curve.ramp_quantile", &RunConfig::ramp_quantile},
        {"curve.alpha", &RunConfig::alpha},
        {"curve.relaxed_factor", &RunConfig::relaxed_factor},
        {"tokenizer.mu", &RunConfig::mu},
        {"model.d_model", &RunConfig::d_model},
        {"model.heads", &RunConfig::heads},
        {"model.blocks", &RunConfig::blocks},
        {"model.d_ff", &RunConfig::d_ff},
        {"model.context_steps", &RunConfig::context_steps},
        {"model.dropout", &RunConfig::dropout},
        {"train.epochs", &RunConfig::epochs},
        {"train.batch_size", &RunConfig::batch_size},
        {"train.learning_rate", &RunConfig::learning_rate},
        {"train.clip_norm", &RunConfig::clip_norm},
        {"train.stride_steps", &RunConfig::stride_steps},
        {"train.max_steps", &RunConfig::max_steps},
        {"train.ce_power_only", &RunConfig::ce_power_only},
        {"loss.lambda_cap", &RunConfig::lambda_cap},
        {"loss.lambda_ramp", &RunConfig::lambda_ramp},
        {"loss.lambda_tv", &RunConfig::lambda_tv},
        {"loss.huber_delta", &RunConfig::huber_delta},
        {"decode.temperature", &RunConfig::temperature},
        {"decode.top_p", &RunConfig::top_p},
        {"decode.horizon", &RunConfig::horizon},
        {"decode.scenarios", &RunConfig::scenarios},
        {"decode.mode", &RunConfig::mode},
        {"decode.smoothing_window", &RunConfig::smoothing_window},
        {"decode.stricter_alpha_factor", &RunConfig::stricter_alpha_factor},
        {"decode.stricter_ramp_divisor", &RunConfig::stricter_ramp_divisor},
        {"decode.persistence", &RunConfig::persistence},
        {"decode.windows", &RunConfig::windows},
        {"metrics.kld_bins", &RunConfig::kld_bins},
        {"metrics.volatility_quantile", &RunConfig::volatility_quantile},
    };
    return k;
}

template <class T>
T parse_unsigned(std::string_view key, std::string_view v) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ValidationError("config key " + std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
    return out;
}

std::string show(const RunConfig& cfg, const Field& f) {
    return std::visit(
        [&](auto member) -> std::string {
            const auto& v = cfg.*member;
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, double>) return format_double(v);
            else if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
            else if constexpr (std::is_same_v<T, std::string>) return v;
            else if constexpr (std::is_same_v<T, ConstraintMode>) return std::string(mode_name(v));
            else return std::to_string(v);
        },
        f);
}

}  // namespace

void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
    for (const Key& k : keys()) {
        if (key != k.name) continue;
        std::visit(
            [&](auto member) {
                auto& v = cfg.*member;
                using T = std::decay_t<decltype(v)>;
                if constexpr (std::is_same_v<T, double>) {
                    const auto d = parse_double(value);
                    if (!d || !std::isfinite(*d))
                        throw ValidationError("config key " + std::string(key) + ": expected a number, got '" + std::string(value) + "'");
                    v = *d;
                } else if constexpr (std::is_same_v<T, bool>) {
                    if (value == "true" || value == "1") v = true;
                    else if (value == "false" || value == "0") v = false;
                    else throw ValidationError("config key " + std::string(key) + ": expected true or false");
                } else if constexpr (std::is_same_v<T, std::string>) {
                    v = std::string(value);
                } else if constexpr (std::is_same_v<T, ConstraintMode>) {
                    v = parse_mode(value);
                } else {
                    v = parse_unsigned<T>(key, value);
                }
            },
            k.field);
        return;
    }
    throw ValidationError("unknown config key '" + std::string(key) + "'");
}

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::string section;
    std::set<std::string> seen;
    std::size_t line_no = 0;
    for (auto raw : split(text, '\n')) {
        ++line_no;
        auto line = raw;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = "config line " + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ValidationError(where + "unterminated section header");
            section = std::string(trim(line.substr(1, line.size() - 2)));
            bool known = false;
            for (const Key& k : keys()) known = known || std::string_view(k.name).starts_with(section + ".");
            if (!known) throw ValidationError(where + "unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ValidationError(where + "expected key = value");
        if (section.empty()) throw ValidationError(where + "key outside of any section");
        const std::string key = section + "." + std::string(trim(line.substr(0, eq)));
        if (!seen.insert(key).second) throw ValidationError(where + "duplicate key " + key);
        try {
            set_config_value(cfg, key, trim(line.substr(eq + 1)));
        } catch (const Error& e) {
            throw ValidationError(where + e.what());
        }
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::string text;
    try {
        text = read_text(path);
    } catch (const Error&) {
        throw ValidationError("cannot read config file " + path);
    }
    return parse_config(text);
}

std::string format_config(const RunConfig& cfg) {
    std::string out;
    std::string section;
    for (const Key& k : keys()) {
        const std::string_view name = k.name;
        const auto dot = name.find('.');
        const auto sec = std::string(name.substr(0, dot));
        if (sec != section) {
            if (!section.empty()) out += "\n";
            out += "[" + sec + "]\n";
            section = sec;
        }
        out += std::string(name.substr(dot + 1)) + " = " + show(cfg, k.field) + "\n";
    }
    return out;
}

std::map<std::string, std::string> config_echo(const RunConfig& cfg) {
    std::map<std::string, std::string> m;
    for (const Key& k : keys()) m[k.name] = show(cfg, k.field);
    // Placement settings do not affect results; leaving them out keeps reports comparable across directories.
    m.erase("run.out_dir");
    m.erase("run.threads");
    return m;
}

std::uint64_t config_hash(const RunConfig& cfg) {
    // The output directory names where artifacts go, not what they contain.
    RunConfig c = cfg;
    c.out_dir.clear();
    c.threads = 1;
    return fnv1a(format_config(c));
}

SynthConfig synth_config(const RunConfig& cfg) {
    SynthConfig s;
    s.rated_power_kw = cfg.synth_rated_kw;
    s.curve_high_kw = cfg.synth_rated_kw;
    s.context_steps = cfg.context_steps;
    s.horizon = cfg.horizon;
    return s;
}

ModelConfig model_config(const RunConfig& cfg, std::size_t vocab) {
    ModelConfig m;
    m.d_model = cfg.d_model;
    m.heads = cfg.heads;
    m.blocks = cfg.blocks;
    m.d_ff = cfg.d_ff;
    m.vocab = vocab;
    m.context = cfg.context_steps * kChannelCount;
    m.dropout = cfg.dropout;
    return m;
}

TrainOptions train_options(const RunConfig& cfg) {
    TrainOptions t;
    t.epochs = cfg.epochs;
    t.batch_size = cfg.batch_size;
    t.learning_rate = cfg.learning_rate;
    t.clip_norm = cfg.clip_norm;
    t.seed = cfg.seed;
    t.max_steps = cfg.max_steps;
    t.threads = cfg.threads;
    return t;
}

LossWeights loss_weights(const RunConfig& cfg) {
    LossWeights w;
    w.lambda_cap = cfg.lambda_cap;
    w.lambda_ramp = cfg.lambda_ramp;
    w.lambda_tv = cfg.lambda_tv;
    w.delta = cfg.huber_delta;
    w.alpha = cfg.alpha;
    return w;
}

DecodeConfig decode_config(const RunConfig& cfg) {
    DecodeConfig d;
    d.temperature = cfg.temperature;
    d.top_p = cfg.top_p;
    d.horizon = cfg.horizon;
    d.scenarios = cfg.scenarios;
    d.seed = cfg.seed;
    d.mode = cfg.mode;
    d.smoothing_window = cfg.smoothing_window;
    d.stricter_alpha_factor = cfg.stricter_alpha_factor;
    d.stricter_ramp_divisor = cfg.stricter_ramp_divisor;
    d.persistence = cfg.persistence;
    d.threads = cfg.threads;
    return d;
}

void RunConfig::validate() const {
    if (threads == 0) throw ValidationError("run.threads must be positive");
    if (input.empty() && synth_length == 0) throw ValidationError("data.synth_length must be positive");
    if (!(synth_rated_kw > 0.0)) throw ValidationError("data.synth_rated_kw must be positive");
    for (double f : {train_fraction, val_fraction, test_fraction})
        if (!(f > 0.0 && f < 1.0)) throw ValidationError("split fractions must lie in (0, 1)");
    if (std::abs(train_fraction + val_fraction + test_fraction - 1.0) > 1e-9)
        throw ValidationError("split fractions must sum to 1");
    if (!(feature_threshold >= 0.0 && feature_threshold < 1.0)) throw ValidationError("data.feature_threshold must lie in [0, 1)");
    if (!(ramp_quantile > 0.5 && ramp_quantile < 1.0)) throw ValidationError("curve.ramp_quantile must lie in (0.5, 1)");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ValidationError("curve.alpha must lie in (0, 1]");
    if (!(relaxed_factor >= 1.0)) throw ValidationError("curve.relaxed_factor must be >= 1");
    if (!(mu > 0.0)) throw ValidationError("tokenizer.mu must be positive");
    if (context_steps < 2) throw ValidationError("model.context_steps must be at least 2");
    if (stride_steps == 0) throw ValidationError("train.stride_steps must be positive");
    if (windows == 0) throw ValidationError("decode.windows must be positive");
    if (horizon + 1 > context_steps) throw ValidationError("decode.horizon must be shorter than model.context_steps");
    if (kld_bins < 2) throw ValidationError("metrics.kld_bins must be at least 2");
    if (!(volatility_quantile >= 0.0 && volatility_quantile < 1.0)) throw ValidationError("metrics.volatility_quantile must lie in [0, 1)");
    model_config(*this, 384).validate();
    train_options(*this).validate();
    loss_weights(*this).validate();
    decode_config(*this).validate();
}

}  // namespace icegen
