#include "icegen/io.hpp"

#include "icegen/error.hpp"
#include "icegen/rng.hpp"
#include "icegen/text.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace icegen {

using json = nlohmann::ordered_json;

std::string hex64(std::uint64_t v) {
    char buf[17];
    static const char* digits = "0123456789abcdef";
    for (int i = 15; i >= 0; --i) {
        buf[i] = digits[v & 0xF];
        v >>= 4;
    }
    buf[16] = '\0';
    return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v, 16);
    if (ec != std::errc() || ptr != s.data() + s.size() || s.size() != 16) throw SchemaError("bad hash '" + s + "'");
    return v;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write " + path.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw DataError("write failed for " + path.string());
    }
    fs::rename(tmp, path);
}

std::uint64_t hash_file(const fs::path& path) { return fnv1a(read_text(path)); }

namespace {

json provenance_json(const Provenance& p) {
    json j;
    j["config_hash"] = hex64(p.config_hash);
    j["seed"] = p.seed;
    json in = json::object();
    for (const auto& [k, v] : p.inputs) in[k] = hex64(v);
    j["inputs"] = in;
    return j;
}

Provenance provenance_from(const json& doc) {
    Provenance p;
    if (!doc.contains("provenance")) return p;
    const json& j = doc.at("provenance");
    p.config_hash = parse_hex64(j.at("config_hash").get<std::string>());
    p.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& [k, v] : j.at("inputs").items()) p.inputs[k] = parse_hex64(v.get<std::string>());
    return p;
}

json parse_json(const std::string& text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("malformed ") + what + ": " + e.what());
    }
}

template <class F>
auto schema_guard(const char* what, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw SchemaError(std::string("invalid ") + what + ": " + e.what());
    }
}

double finite(double v, const char* name) {
    if (!std::isfinite(v)) throw ValidationError(std::string(name) + " is not finite");
    return v;
}

json envelope_fields(const PhysicsEnvelope& env) {
    json c;
    c["low_kw"] = finite(env.curve.low_kw, "curve low");
    c["high_kw"] = finite(env.curve.high_kw, "curve high");
    c["midpoint_ms"] = finite(env.curve.midpoint_ms, "curve midpoint");
    c["scale_ms"] = finite(env.curve.scale_ms, "curve scale");
    c["rated_kw"] = env.curve.rated_kw;
    c["rmse_kw"] = env.curve.rmse_kw;
    c["converged"] = env.curve.converged;
    c["iterations"] = env.curve.iterations;
    json j;
    j["rated_kw"] = env.rated_kw;
    j["curve"] = c;
    j["alpha"] = env.alpha;
    j["ramp_up_kw"] = env.ramp_up_kw;
    j["ramp_down_kw"] = env.ramp_down_kw;
    j["relaxed_ramp_kw"] = env.relaxed_ramp_kw;
    return j;
}

json spec_fields(const TokenizerSpec& spec) {
    json j;
    j["mu"] = spec.mu;
    j["rated_kw"] = spec.rated_kw;
    j["vocab_size"] = spec.vocab_size;
    json codecs = json::array();
    for (const auto& c : spec.codecs) {
        json k;
        k["channel"] = std::string(channel_name(c.channel));
        k["offset"] = c.offset;
        k["bins"] = c.bins;
        k["range_min"] = c.range_min;
        k["range_max"] = c.range_max;
        k["degenerate"] = c.degenerate;
        k["edges"] = c.edges;
        codecs.push_back(k);
    }
    j["codecs"] = codecs;
    return j;
}

}  // namespace

std::uint64_t content_hash(const PhysicsEnvelope& env) { return fnv1a(envelope_fields(env).dump()); }
std::uint64_t content_hash(const TokenizerSpec& spec) { return fnv1a(spec_fields(spec).dump()); }

std::string envelope_to_json(const PhysicsEnvelope& env, const Provenance& prov) {
    json j;
    j["kind"] = "physics_envelope";
    j["envelope"] = envelope_fields(env);
    j["provenance"] = provenance_json(prov);
    return j.dump(2) + "\n";
}

Stamped<PhysicsEnvelope> envelope_from_json(const std::string& text) {
    const json doc = parse_json(text, "envelope");
    return schema_guard("envelope", [&] {
        if (doc.at("kind") != "physics_envelope") throw SchemaError("not a physics envelope");
        const json& j = doc.at("envelope");
        const json& c = j.at("curve");
        Stamped<PhysicsEnvelope> s;
        PhysicsEnvelope& e = s.value;
        e.rated_kw = j.at("rated_kw").get<double>();
        e.alpha = j.at("alpha").get<double>();
        e.ramp_up_kw = j.at("ramp_up_kw").get<double>();
        e.ramp_down_kw = j.at("ramp_down_kw").get<double>();
        e.relaxed_ramp_kw = j.at("relaxed_ramp_kw").get<double>();
        e.curve.low_kw = c.at("low_kw").get<double>();
        e.curve.high_kw = c.at("high_kw").get<double>();
        e.curve.midpoint_ms = c.at("midpoint_ms").get<double>();
        e.curve.scale_ms = c.at("scale_ms").get<double>();
        e.curve.rated_kw = c.at("rated_kw").get<double>();
        e.curve.rmse_kw = c.at("rmse_kw").get<double>();
        e.curve.converged = c.at("converged").get<bool>();
        e.curve.iterations = c.at("iterations").get<std::size_t>();
        e.validate();
        s.provenance = provenance_from(doc);
        return s;
    });
}

void save_envelope(const fs::path& path, const PhysicsEnvelope& env, const Provenance& prov) {
    write_text(path, envelope_to_json(env, prov));
}

Stamped<PhysicsEnvelope> load_envelope(const fs::path& path) { return envelope_from_json(read_text(path)); }

std::string spec_to_json(const TokenizerSpec& spec, const Provenance& prov) {
    json j;
    j["kind"] = "tokenizer_spec";
    j["spec"] = spec_fields(spec);
    j["provenance"] = provenance_json(prov);
    return j.dump(2) + "\n";
}

Stamped<TokenizerSpec> spec_from_json(const std::string& text) {
    const json doc = parse_json(text, "tokenizer spec");
    return schema_guard("tokenizer spec", [&] {
        if (doc.at("kind") != "tokenizer_spec") throw SchemaError("not a tokenizer spec");
        const json& j = doc.at("spec");
        Stamped<TokenizerSpec> s;
        TokenizerSpec& t = s.value;
        t.mu = j.at("mu").get<double>();
        t.rated_kw = j.at("rated_kw").get<double>();
        t.vocab_size = j.at("vocab_size").get<std::size_t>();
        const json& codecs = j.at("codecs");
        if (codecs.size() != kChannelCount) throw SchemaError("tokenizer spec needs one codec per channel");
        std::size_t expected_offset = 0;
        for (std::size_t i = 0; i < kChannelCount; ++i) {
            const json& k = codecs[i];
            ChannelCodec& c = t.codecs[i];
            c.channel = kAllChannels[i];
            if (k.at("channel").get<std::string>() != channel_name(c.channel))
                throw SchemaError("codec " + std::to_string(i) + " is not " + std::string(channel_name(c.channel)));
            c.offset = k.at("offset").get<std::size_t>();
            c.bins = k.at("bins").get<std::size_t>();
            c.range_min = k.at("range_min").get<double>();
            c.range_max = k.at("range_max").get<double>();
            c.degenerate = k.at("degenerate").get<bool>();
            c.edges = k.at("edges").get<std::vector<double>>();
            if (c.offset != expected_offset) throw SchemaError("codec offsets are not contiguous");
            if (c.edges.size() + 1 > std::max<std::size_t>(c.bins, 1)) throw SchemaError("more edges than bins");
            for (std::size_t e = 1; e < c.edges.size(); ++e)
                if (!(c.edges[e] > c.edges[e - 1])) throw SchemaError("quantile edges must increase");
            expected_offset += c.bins;
        }
        if (expected_offset != t.vocab_size) throw SchemaError("vocabulary size does not match codec bins");
        if (!(t.mu > 0.0) || !(t.rated_kw > 0.0)) throw SchemaError("mu and rated power must be positive");
        s.provenance = provenance_from(doc);
        return s;
    });
}

void save_spec(const fs::path& path, const TokenizerSpec& spec, const Provenance& prov) {
    write_text(path, spec_to_json(spec, prov));
}

Stamped<TokenizerSpec> load_spec(const fs::path& path) { return spec_from_json(read_text(path)); }

void save_tokens(const fs::path& path, const TokenSequence& seq, const std::vector<std::size_t>& segment_starts,
                 const Provenance& prov) {
    std::string bytes;
    bytes.reserve(seq.tokens.size() * 2);
    for (Token t : seq.tokens) {
        bytes.push_back(static_cast<char>(t & 0xFF));
        bytes.push_back(static_cast<char>(t >> 8));
    }
    write_text(path, bytes);
    json j;
    j["kind"] = "token_stream";
    j["steps"] = seq.steps;
    j["channels"] = seq.channels;
    j["segment_starts"] = segment_starts;
    j["checksum"] = hex64(fnv1a(bytes));
    j["provenance"] = provenance_json(prov);
    fs::path side = path;
    side += ".json";
    write_text(side, j.dump(2) + "\n");
}

TokenFile load_tokens(const fs::path& path) {
    const std::string bytes = read_text(path);
    fs::path side = path;
    side += ".json";
    const json doc = parse_json(read_text(side), "token sidecar");
    return schema_guard("token sidecar", [&] {
        TokenFile f;
        f.sequence.steps = doc.at("steps").get<std::size_t>();
        if (doc.at("channels").get<std::size_t>() != f.sequence.channels) throw SchemaError("token stream has an unexpected channel count");
        f.segment_starts = doc.at("segment_starts").get<std::vector<std::size_t>>();
        if (bytes.size() != 2 * f.sequence.steps * f.sequence.channels) throw DataError("token file length does not match its sidecar");
        if (parse_hex64(doc.at("checksum").get<std::string>()) != fnv1a(bytes)) throw DataError("token file checksum mismatch");
        f.sequence.tokens.resize(bytes.size() / 2);
        for (std::size_t i = 0; i < f.sequence.tokens.size(); ++i) {
            const auto lo = static_cast<unsigned char>(bytes[2 * i]);
            const auto hi = static_cast<unsigned char>(bytes[2 * i + 1]);
            f.sequence.tokens[i] = static_cast<Token>(lo | (hi << 8));
        }
        f.provenance = provenance_from(doc);
        return f;
    });
}

namespace {

constexpr char kMagic[8] = {'I', 'C', 'E', 'G', 'C', 'K', 'P', 'T'};

struct Writer {
    std::vector<std::uint8_t> out;
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
};

struct Reader {
    const std::vector<std::uint8_t>& in;
    std::size_t pos = 0;
    void need(std::size_t n) const {
        if (pos + n > in.size()) throw DataError("checkpoint truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos++]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in[pos++]) << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
};

std::uint64_t checksum(const std::vector<std::uint8_t>& bytes, std::size_t n) {
    return fnv1a(std::span<const std::byte>(reinterpret_cast<const std::byte*>(bytes.data()), n));
}

}  // namespace

std::vector<std::uint8_t> checkpoint_bytes(const ModelParams& params, const CheckpointMeta& meta) {
    const ModelConfig& c = params.config;
    Writer w;
    w.out.insert(w.out.end(), kMagic, kMagic + 8);
    w.u32(kCheckpointVersion);
    for (std::size_t v : {c.d_model, c.heads, c.blocks, c.d_ff, c.vocab, c.context}) w.u32(static_cast<std::uint32_t>(v));
    w.f32(static_cast<float>(c.dropout));
    w.u64(meta.seed);
    w.u64(meta.config_hash);
    w.u64(meta.spec_hash);
    w.u64(meta.envelope_hash);
    const auto tensors = params.tensors();
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        w.u32(static_cast<std::uint32_t>(t.value->rows()));
        w.u32(static_cast<std::uint32_t>(t.value->cols()));
        const double* d = t.value->data();
        for (Eigen::Index i = 0; i < t.value->size(); ++i) w.f32(static_cast<float>(d[i]));
    }
    w.u64(checksum(w.out, w.out.size()));
    return std::move(w.out);
}

Checkpoint checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8 + 4 + 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) throw DataError("not an icegen checkpoint");
    Reader tail{bytes, bytes.size() - 8};
    if (tail.u64() != checksum(bytes, bytes.size() - 8)) throw DataError("checkpoint checksum mismatch");
    Reader r{bytes, 8};
    if (const auto v = r.u32(); v != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(v));
    ModelConfig c;
    c.d_model = r.u32();
    c.heads = r.u32();
    c.blocks = r.u32();
    c.d_ff = r.u32();
    c.vocab = r.u32();
    c.context = r.u32();
    c.dropout = static_cast<double>(r.f32());
    c.validate();
    Checkpoint ck;
    ck.meta.seed = r.u64();
    ck.meta.config_hash = r.u64();
    ck.meta.spec_hash = r.u64();
    ck.meta.envelope_hash = r.u64();
    ck.params = ModelParams::zeros(c);
    auto tensors = ck.params.tensors();
    if (r.u32() != tensors.size()) throw DataError("checkpoint tensor count does not match its config");
    for (auto& t : tensors) {
        const auto rows = r.u32();
        const auto cols = r.u32();
        if (rows != t.value->rows() || cols != t.value->cols()) throw DataError("checkpoint tensor " + t.name + " has the wrong shape");
        double* d = t.value->data();
        for (Eigen::Index i = 0; i < t.value->size(); ++i) d[i] = static_cast<double>(r.f32());
    }
    if (r.pos != bytes.size() - 8) throw DataError("checkpoint has trailing bytes");
    if (!ck.params.all_finite()) throw DataError("checkpoint contains non-finite weights");
    return ck;
}

void save_checkpoint(const fs::path& path, const ModelParams& params, const CheckpointMeta& meta) {
    const auto bytes = checkpoint_bytes(params, meta);
    write_text(path, std::string(bytes.begin(), bytes.end()));
}

Checkpoint load_checkpoint(const fs::path& path) {
    const std::string text = read_text(path);
    return checkpoint_from_bytes(std::vector<std::uint8_t>(text.begin(), text.end()));
}

void save_scenarios(const fs::path& path, const ScenarioFile& file) {
    if (file.truth_begin.size() != file.sets.size()) throw ShapeError("one truth row is needed per scenario window");
    std::string out;
    out += "# config_hash=" + hex64(file.provenance.config_hash) + " seed=" + std::to_string(file.provenance.seed) + "\n";
    for (const auto& [k, v] : file.provenance.inputs) out += "# input " + k + "=" + hex64(v) + "\n";
    for (std::size_t w = 0; w < file.sets.size(); ++w) {
        const ScenarioSet& s = file.sets[w];
        out += "# window=" + std::to_string(w) + " truth_begin=" + std::to_string(file.truth_begin[w]) +
               " scenarios=" + std::to_string(s.scenarios) + " horizon=" + std::to_string(s.horizon) +
               " mode=" + std::string(mode_name(s.mode)) + " seed=" + std::to_string(s.seed) +
               " last_power_kw=" + format_double(s.last_power_kw) + "\n";
    }
    out += "window_id,scenario_id,step,power_kw,projected_flag\n";
    for (std::size_t w = 0; w < file.sets.size(); ++w) {
        const ScenarioSet& s = file.sets[w];
        for (std::size_t m = 0; m < s.scenarios; ++m) {
            for (std::size_t h = 0; h < s.horizon; ++h) {
                out += std::to_string(w) + "," + std::to_string(m) + "," + std::to_string(h) + "," +
                       format_double(s.at(m, h)) + "," + (s.projected[m * s.horizon + h] ? "1" : "0") + "\n";
            }
        }
    }
    write_text(path, out);
}

namespace {

std::map<std::string, std::string> key_values(std::string_view line) {
    std::map<std::string, std::string> kv;
    for (auto part : split(line, ' ')) {
        const auto eq = part.find('=');
        if (eq == std::string_view::npos) continue;
        kv[std::string(part.substr(0, eq))] = std::string(part.substr(eq + 1));
    }
    return kv;
}

std::size_t to_size(const std::string& s, const char* what) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw SchemaError(std::string("bad ") + what + " '" + s + "'");
    return v;
}

}  // namespace

ScenarioFile load_scenarios(const fs::path& path) {
    const std::string text = read_text(path);
    ScenarioFile f;
    bool header_seen = false;
    std::size_t line_no = 0;
    for (auto raw : split(text, '\n')) {
        ++line_no;
        const auto line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '#') {
            const auto body = trim(line.substr(1));
            if (body.starts_with("input ")) {
                const auto kv = key_values(body.substr(6));
                for (const auto& [k, v] : kv) f.provenance.inputs[k] = parse_hex64(v);
                continue;
            }
            const auto kv = key_values(body);
            if (kv.count("window")) {
                ScenarioSet s;
                s.scenarios = to_size(kv.at("scenarios"), "scenario count");
                s.horizon = to_size(kv.at("horizon"), "horizon");
                s.mode = parse_mode(kv.at("mode"));
                s.seed = to_size(kv.at("seed"), "seed");
                const auto last = parse_double(kv.at("last_power_kw"));
                if (!last) throw SchemaError("bad last_power_kw");
                s.last_power_kw = *last;
                s.power_kw.assign(s.scenarios * s.horizon, std::nan(""));
                s.projected.assign(s.scenarios * s.horizon, 0);
                s.warnings.assign(s.scenarios * s.horizon, 0);
                if (to_size(kv.at("window"), "window id") != f.sets.size()) throw SchemaError("scenario windows out of order");
                f.sets.push_back(std::move(s));
                f.truth_begin.push_back(to_size(kv.at("truth_begin"), "truth row"));
            } else if (kv.count("config_hash")) {
                f.provenance.config_hash = parse_hex64(kv.at("config_hash"));
                f.provenance.seed = to_size(kv.at("seed"), "seed");
            }
            continue;
        }
        if (!header_seen) {
            if (line != "window_id,scenario_id,step,power_kw,projected_flag") throw SchemaError("unexpected scenario header");
            header_seen = true;
            continue;
        }
        const auto cols = split(line, ',');
        if (cols.size() != 5) throw SchemaError("scenario row " + std::to_string(line_no) + " needs 5 columns");
        const std::size_t w = to_size(std::string(cols[0]), "window id");
        const std::size_t m = to_size(std::string(cols[1]), "scenario id");
        const std::size_t h = to_size(std::string(cols[2]), "step");
        const auto p = parse_double(cols[3]);
        if (w >= f.sets.size() || m >= f.sets[w].scenarios || h >= f.sets[w].horizon || !p)
            throw SchemaError("scenario row " + std::to_string(line_no) + " is out of range");
        ScenarioSet& s = f.sets[w];
        s.at(m, h) = *p;
        s.projected[m * s.horizon + h] = cols[4] == "1" ? 1 : 0;
    }
    for (const auto& s : f.sets) {
        for (double v : s.power_kw)
            if (std::isnan(v)) throw SchemaError("scenario file is missing rows");
    }
    return f;
}

std::string report_to_json(const EvalReport& r, const std::map<std::string, std::string>& echo, const Provenance& prov) {
    json j;
    j["kind"] = "evaluation_report";
    j["windows"] = r.windows;
    j["scenarios"] = r.scenarios;
    j["horizon"] = r.horizon;
    j["crps"] = r.crps;
    j["kld"] = r.kld;
    j["vr_strict"] = r.vr_strict;
    j["vr_relaxed"] = r.vr_relaxed;
    j["diversity"] = r.diversity;
    j["projection_rate"] = r.projection;
    j["projection_warnings"] = r.warnings;
    j["strict_checks"] = {{"checks", r.strict.checks}, {"failures", r.strict.failures},
                          {"cap", r.strict.cap_failures}, {"ramp", r.strict.ramp_failures}};
    j["relaxed_checks"] = {{"checks", r.relaxed.checks}, {"failures", r.relaxed.failures},
                           {"cap", r.relaxed.cap_failures}, {"ramp", r.relaxed.ramp_failures}};
    json cfg = json::object();
    for (const auto& [k, v] : echo) cfg[k] = v;
    j["config"] = cfg;
    j["provenance"] = provenance_json(prov);
    return j.dump(2) + "\n";
}

void save_report(const fs::path& path, const EvalReport& r, const std::map<std::string, std::string>& echo,
                 const Provenance& prov) {
    write_text(path, report_to_json(r, echo, prov));
}

}  // namespace icegen
