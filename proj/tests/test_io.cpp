#include <doctest.h>

#include "icegen/error.hpp"
#include "icegen/io.hpp"
#include "scenario_fixture.hpp"
#include "temp_dir.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>

using namespace icegen;
using namespace icegen::testing;

namespace {

const ScenarioFixture& fixture() {
    static const ScenarioFixture f(5, 2000);
    return f;
}

Provenance prov() {
    Provenance p;
    p.config_hash = 0x0123456789abcdefULL;
    p.seed = 42;
    p.inputs["data"] = 0xfeedfacecafebeefULL;
    return p;
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("hex hashes") {
    CHECK(hex64(0) == "0000000000000000");
    CHECK(hex64(0xabcdef0123456789ULL) == "abcdef0123456789");
    CHECK(parse_hex64("abcdef0123456789") == 0xabcdef0123456789ULL);
    CHECK_THROWS_AS(parse_hex64("xyz"), SchemaError);
    CHECK_THROWS_AS(parse_hex64("123"), SchemaError);
}

TEST_CASE("text files are replaced whole") {
    TempDir dir;
    write_text(dir / "a.txt", "first");
    write_text(dir / "a.txt", "second");
    CHECK(read_text(dir / "a.txt") == "second");
    CHECK_FALSE(std::filesystem::exists(dir / "a.txt.tmp"));
    CHECK_THROWS_AS(read_text(dir / "missing.txt"), DataError);
    CHECK(hash_file(dir / "a.txt") != 0);
}

TEST_CASE("envelope round trip is bit-exact") {
    TempDir dir;
    PhysicsEnvelope env = fixture().env;
    env.curve.midpoint_ms = 0.1 + 0.2;  // not exactly representable in short decimal
    save_envelope(dir / "env.json", env, prov());
    const auto back = load_envelope(dir / "env.json");
    CHECK(same_bits(back.value.curve.midpoint_ms, env.curve.midpoint_ms));
    CHECK(same_bits(back.value.curve.scale_ms, env.curve.scale_ms));
    CHECK(same_bits(back.value.curve.low_kw, env.curve.low_kw));
    CHECK(same_bits(back.value.ramp_up_kw, env.ramp_up_kw));
    CHECK(same_bits(back.value.relaxed_ramp_kw, env.relaxed_ramp_kw));
    CHECK(content_hash(back.value) == content_hash(env));
    CHECK(back.provenance.config_hash == prov().config_hash);
    CHECK(back.provenance.seed == 42);
    CHECK(back.provenance.inputs.at("data") == prov().inputs.at("data"));
}

TEST_CASE("spec round trip is bit-exact and encodes identically") {
    TempDir dir;
    const auto& spec = fixture().spec;
    save_spec(dir / "spec.json", spec, prov());
    const TokenizerSpec back = load_spec(dir / "spec.json").value;
    CHECK(content_hash(back) == content_hash(spec));
    CHECK(back.vocab_size == spec.vocab_size);
    for (Channel c : kAllChannels) {
        const auto& a = spec.codec(c);
        const auto& b = back.codec(c);
        CHECK(a.edges.size() == b.edges.size());
        for (std::size_t i = 0; i < a.edges.size(); ++i) CHECK(same_bits(a.edges[i], b.edges[i]));
        CHECK(same_bits(a.range_min, b.range_min));
        CHECK(same_bits(a.range_max, b.range_max));
    }
    const auto& frame = fixture().frame;
    CHECK(tokenize(frame, spec).tokens == tokenize(frame, back).tokens);
}

TEST_CASE("malformed or mismatched documents are schema errors") {
    const auto& f = fixture();
    CHECK_THROWS_AS(envelope_from_json("{not json"), SchemaError);
    CHECK_THROWS_AS(envelope_from_json(spec_to_json(f.spec, prov())), SchemaError);
    CHECK_THROWS_AS(spec_from_json(envelope_to_json(f.env, prov())), SchemaError);
    auto doc = nlohmann::json::parse(spec_to_json(f.spec, prov()));
    doc["spec"]["vocab_size"] = 999;
    CHECK_THROWS_AS(spec_from_json(doc.dump()), SchemaError);
    auto env = nlohmann::json::parse(envelope_to_json(f.env, prov()));
    env["envelope"].erase("alpha");
    CHECK_THROWS_AS(envelope_from_json(env.dump()), SchemaError);
}

TEST_CASE("token files") {
    TempDir dir;
    const auto& f = fixture();
    const auto seq = tokenize(f.frame, f.spec);
    save_tokens(dir / "tokens.bin", seq, f.frame.segment_starts, prov());
    // Little-endian u16 ids.
    std::ifstream in(dir / "tokens.bin", std::ios::binary);
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    CHECK(static_cast<Token>(b[0] | (b[1] << 8)) == seq.tokens[0]);
    CHECK(std::filesystem::file_size(dir / "tokens.bin") == 2 * seq.tokens.size());
    const auto back = load_tokens(dir / "tokens.bin");
    CHECK(back.sequence.tokens == seq.tokens);
    CHECK(back.sequence.steps == seq.steps);
    CHECK(back.segment_starts == f.frame.segment_starts);
    CHECK(back.provenance.seed == 42);
    {
        std::fstream io(dir / "tokens.bin", std::ios::binary | std::ios::in | std::ios::out);
        io.seekp(10);
        io.put('\x7f');
    }
    CHECK_THROWS_AS(load_tokens(dir / "tokens.bin"), DataError);
}

TEST_CASE("checkpoint round trip and corruption") {
    TempDir dir;
    const auto& params = fixture().params;
    const CheckpointMeta meta{9, 1, 2, 3};
    save_checkpoint(dir / "model.ckpt", params, meta);
    const auto ck = load_checkpoint(dir / "model.ckpt");
    CHECK(ck.meta.seed == 9);
    CHECK(ck.meta.config_hash == 1);
    CHECK(ck.meta.spec_hash == 2);
    CHECK(ck.meta.envelope_hash == 3);
    CHECK(ck.params.config.d_model == params.config.d_model);
    CHECK(ck.params.config.context == params.config.context);
    const auto a = params.tensors();
    const auto b = ck.params.tensors();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(((*a[i].value).cast<float>().cast<double>() - *b[i].value).cwiseAbs().maxCoeff() == 0.0);
    // Stored values are f32, so a second round trip is exact.
    CHECK(checkpoint_bytes(ck.params, ck.meta) == checkpoint_bytes(checkpoint_from_bytes(checkpoint_bytes(ck.params, ck.meta)).params, meta));

    auto bytes = checkpoint_bytes(params, meta);
    CHECK(std::memcmp(bytes.data(), "ICEGCKPT", 8) == 0);
    for (std::size_t pos : {std::size_t{9}, bytes.size() / 2, bytes.size() - 1}) {
        auto bad = bytes;
        bad[pos] ^= 0x40;
        CHECK_THROWS_AS(checkpoint_from_bytes(bad), DataError);
    }
    auto cut = bytes;
    cut.resize(bytes.size() / 3);
    CHECK_THROWS_AS(checkpoint_from_bytes(cut), DataError);
    CHECK_THROWS_AS(checkpoint_from_bytes(std::vector<std::uint8_t>(64, 0)), DataError);
}

TEST_CASE("scenario files") {
    TempDir dir;
    const auto& f = fixture();
    DecodeConfig c;
    c.horizon = 4;
    c.scenarios = 3;
    c.seed = 77;
    ScenarioFile file;
    for (std::size_t w = 0; w < 2; ++w) {
        c.mode = w == 0 ? ConstraintMode::Default : ConstraintMode::Unconstrained;
        file.sets.push_back(generate(f.params, f.window(300 + 100 * w, 10, 4), f.env, f.spec, c));
        file.truth_begin.push_back(310 + 100 * w);
    }
    file.sets[0].projected[2] = 1;
    file.provenance = prov();
    save_scenarios(dir / "s.csv", file);
    const std::string text = read_text(dir / "s.csv");
    CHECK(text.find("window_id,scenario_id,step,power_kw,projected_flag") != std::string::npos);
    const auto back = load_scenarios(dir / "s.csv");
    REQUIRE(back.sets.size() == 2);
    CHECK(back.truth_begin == file.truth_begin);
    CHECK(back.provenance.config_hash == prov().config_hash);
    for (std::size_t w = 0; w < 2; ++w) {
        CHECK(back.sets[w].power_kw == file.sets[w].power_kw);
        CHECK(back.sets[w].projected == file.sets[w].projected);
        CHECK(back.sets[w].mode == file.sets[w].mode);
        CHECK(back.sets[w].seed == 77);
        CHECK(back.sets[w].last_power_kw == file.sets[w].last_power_kw);
    }
    write_text(dir / "bad.csv", "window_id,scenario_id,step,power_kw,projected_flag\n0,0,0,abc,0\n");
    CHECK_THROWS(load_scenarios(dir / "bad.csv"));
}

TEST_CASE("evaluation report json") {
    EvalReport r;
    r.windows = 2;
    r.crps = 0.125;
    r.kld = 0.5;
    r.vr_strict = 1.5;
    r.strict.checks = 100;
    r.strict.failures = 3;
    const auto doc = nlohmann::json::parse(report_to_json(r, {{"decode.top_p", "0.9"}}, prov()));
    CHECK(doc.at("kind") == "evaluation_report");
    CHECK(doc.at("crps").get<double>() == 0.125);
    CHECK(doc.at("kld").get<double>() == 0.5);
    CHECK(doc.at("vr_strict").get<double>() == 1.5);
    CHECK(doc.at("config").at("decode.top_p") == "0.9");
    CHECK(doc.dump().find("0123456789abcdef") != std::string::npos);
}
