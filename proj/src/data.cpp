#include "icegen/data.hpp"

#include "icegen/error.hpp"
#include "icegen/rng.hpp"
#include "icegen/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>

namespace icegen {

namespace {

constexpr std::array<std::string_view, 8> kCanonicalKeys = {
    "timestamp", "power_kw", "wind_ms", "temp_c", "pitch_deg", "yaw_deg", "gen_rpm", "icing"};

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

std::optional<std::int64_t> parse_int(std::string_view s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
    return v;
}

// Epoch seconds, or ISO-8601 "YYYY-MM-DD[T ]HH:MM[:SS[.fff]][Z]".
std::optional<std::int64_t> parse_timestamp(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    if (s.find('-', 1) == std::string_view::npos && s.find(':') == std::string_view::npos) {
        auto v = parse_double(s);
        if (!v || !std::isfinite(*v)) return std::nullopt;
        return static_cast<std::int64_t>(std::floor(*v));
    }
    if (s.size() < 16 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':')
        return std::nullopt;
    auto y = parse_int(s.substr(0, 4));
    auto mo = parse_int(s.substr(5, 2));
    auto d = parse_int(s.substr(8, 2));
    auto h = parse_int(s.substr(11, 2));
    auto mi = parse_int(s.substr(14, 2));
    std::int64_t sec = 0;
    if (s.size() >= 19 && s[16] == ':') {
        auto sv = parse_int(s.substr(17, 2));
        if (!sv) return std::nullopt;
        sec = *sv;
    }
    if (!y || !mo || !d || !h || !mi || *mo < 1 || *mo > 12 || *d < 1 || *d > 31 || *h > 23 || *mi > 59 || sec > 60)
        return std::nullopt;
    return days_from_civil(*y, static_cast<unsigned>(*mo), static_cast<unsigned>(*d)) * 86400 + *h * 3600 +
           *mi * 60 + sec;
}

struct RawRow {
    std::int64_t ts;
    std::array<double, kChannelCount> v;
    double icing;
};

}  // namespace

LoadResult read_csv(std::istream& in, const LoadOptions& options) {
    LoadResult result;
    auto& stats = result.stats;

    double rated = options.rated_power_kw;
    std::string line;
    std::vector<std::string> header;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (t.empty()) continue;
        if (t.front() == '#') {
            constexpr std::string_view key = "rated_power_kw=";
            auto pos = t.find(key);
            if (pos != std::string_view::npos && rated <= 0.0) {
                if (auto v = parse_double(t.substr(pos + key.size()))) rated = *v;
            }
            continue;
        }
        for (auto f : split(t, ',')) header.emplace_back(trim(f));
        break;
    }
    if (header.empty()) throw SchemaError("missing header row");

    std::array<int, kCanonicalKeys.size()> column{};
    column.fill(-1);
    for (std::size_t k = 0; k < kCanonicalKeys.size(); ++k) {
        std::string name(kCanonicalKeys[k]);
        if (auto it = options.schema.find(name); it != options.schema.end()) name = it->second;
        auto hit = std::find(header.begin(), header.end(), name);
        if (hit != header.end()) column[k] = static_cast<int>(hit - header.begin());
    }
    for (std::size_t k : {0u, 1u, 2u}) {
        if (column[k] < 0) throw SchemaError("mandatory column '" + std::string(kCanonicalKeys[k]) + "' not found");
    }

    std::vector<RawRow> rows;
    while (std::getline(in, line)) {
        auto t = trim(line);
        if (t.empty() || t.front() == '#') continue;
        ++stats.rows_read;
        auto fields = split(t, ',');
        RawRow row{};
        bool ok = true;
        auto field = [&](std::size_t k) -> std::optional<std::string_view> {
            if (column[k] < 0) return std::nullopt;
            const auto idx = static_cast<std::size_t>(column[k]);
            if (idx >= fields.size()) {
                ok = false;
                return std::nullopt;
            }
            return fields[idx];
        };
        if (auto f = field(0)) {
            auto ts = parse_timestamp(*f);
            if (!ts) ok = false;
            else row.ts = *ts;
        }
        for (std::size_t c = 0; c < kChannelCount && ok; ++c) {
            auto f = field(c + 1);
            if (!f) {
                row.v[c] = 0.0;
                continue;
            }
            auto v = parse_double(*f);
            if (!v || !std::isfinite(*v)) ok = false;
            else row.v[c] = *v;
        }
        if (ok) {
            if (auto f = field(7)) {
                auto v = parse_double(*f);
                if (!v || !std::isfinite(*v)) ok = false;
                else row.icing = *v != 0.0 ? 1.0 : 0.0;
            }
        }
        if (!ok) {
            ++stats.rows_dropped;
            continue;
        }
        rows.push_back(row);
    }
    if (rows.size() < 2) throw InsufficientDataError("fewer than 2 valid rows");

    if (rated <= 0.0) {
        for (const auto& r : rows) rated = std::max(rated, r.v[0]);
    }
    if (!(rated > 0.0)) throw InsufficientDataError("cannot determine rated power");

    for (auto& r : rows) {
        if (r.v[0] < 0.0 || r.v[0] > rated) {
            r.v[0] = std::clamp(r.v[0], 0.0, rated);
            ++stats.values_clipped;
        }
    }

    std::stable_sort(rows.begin(), rows.end(), [](const RawRow& a, const RawRow& b) { return a.ts < b.ts; });

    // Minute buckets: arithmetic mean of every channel, majority vote for icing.
    struct Bucket {
        std::int64_t ts;
        std::array<double, kChannelCount> v;
        bool icing;
    };
    std::vector<Bucket> buckets;
    for (std::size_t i = 0; i < rows.size();) {
        const std::int64_t minute = rows[i].ts - ((rows[i].ts % 60) + 60) % 60;
        std::array<double, kChannelCount> sum{};
        double ice = 0.0;
        std::size_t n = 0;
        while (i < rows.size() && rows[i].ts - ((rows[i].ts % 60) + 60) % 60 == minute) {
            for (std::size_t c = 0; c < kChannelCount; ++c) sum[c] += rows[i].v[c];
            ice += rows[i].icing;
            ++n;
            ++i;
        }
        Bucket b{minute, {}, ice * 2.0 >= static_cast<double>(n)};
        for (std::size_t c = 0; c < kChannelCount; ++c) b.v[c] = sum[c] / static_cast<double>(n);
        buckets.push_back(b);
    }
    if (buckets.size() < 2) throw InsufficientDataError("fewer than 2 one-minute rows after resampling");

    SeriesFrame& frame = result.frame;
    frame.rated_power_kw = rated;
    frame.reserve(buckets.size());
    frame.push_row(buckets[0].ts, buckets[0].v, buckets[0].icing);
    for (std::size_t i = 1; i < buckets.size(); ++i) {
        const auto& prev = buckets[i - 1];
        const auto& cur = buckets[i];
        const std::int64_t gap = cur.ts - prev.ts;
        if (gap > 60 && gap <= options.max_interp_gap_s) {
            const auto steps = gap / 60;
            for (std::int64_t k = 1; k < steps; ++k) {
                const double w = static_cast<double>(k) / static_cast<double>(steps);
                std::array<double, kChannelCount> v{};
                for (std::size_t c = 0; c < kChannelCount; ++c) v[c] = prev.v[c] + w * (cur.v[c] - prev.v[c]);
                frame.push_row(prev.ts + 60 * k, v, prev.icing);
                ++stats.rows_interpolated;
            }
        }
        frame.push_row(cur.ts, cur.v, cur.icing);
    }
    stats.segments = frame.segment_starts.size();
    return result;
}

LoadResult load_csv(const std::filesystem::path& path, const LoadOptions& options) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open '" + path.string() + "'");
    return read_csv(in, options);
}

void write_csv(const SeriesFrame& frame, std::ostream& out) {
    out << "# rated_power_kw=" << format_double(frame.rated_power_kw) << '\n';
    out << "timestamp";
    for (Channel c : kAllChannels) out << ',' << channel_column(c);
    out << ",icing\n";
    for (std::size_t i = 0; i < frame.size(); ++i) {
        out << frame.timestamps[i];
        for (std::size_t c = 0; c < kChannelCount; ++c) out << ',' << format_double(frame.channels[c][i]);
        out << ',' << static_cast<int>(frame.icing[i]) << '\n';
    }
}

void write_csv(const SeriesFrame& frame, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SchemaError("cannot write '" + path.string() + "'");
    write_csv(frame, out);
}

SplitIndex chrono_split(std::size_t length, const std::array<double, 3>& fractions) {
    for (double f : fractions) {
        if (!(f > 0.0)) throw ValidationError("split fractions must be positive");
    }
    const double total = fractions[0] + fractions[1] + fractions[2];
    if (std::abs(total - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");
    if (length < 10) throw InsufficientDataError("need at least 10 rows to split");
    const auto n = static_cast<double>(length);
    // The epsilon absorbs representation error such as 0.7 * 30 = 20.999...
    const auto n_train = static_cast<std::size_t>(std::floor(fractions[0] * n + 1e-9));
    const auto n_val = static_cast<std::size_t>(std::floor(fractions[1] * n + 1e-9));
    return {{0, n_train}, {n_train, n_train + n_val}, {n_train + n_val, length}};
}

double synth_baseline_kw(const SynthConfig& c, double wind_ms) {
    const double z = (wind_ms - c.curve_mid_ms) / c.curve_scale_ms;
    return c.curve_low_kw + (c.curve_high_kw - c.curve_low_kw) / (1.0 + std::exp(-z));
}

SeriesFrame synth_icing(const SynthConfig& config, std::size_t length, std::uint64_t seed) {
    const std::size_t min_length = 2 * config.context_steps + config.horizon;
    if (length < min_length || length < 2)
        throw InsufficientDataError("synthetic length " + std::to_string(length) + " below minimum " +
                                    std::to_string(min_length));
    if (config.curve_high_kw > config.rated_power_kw || config.curve_low_kw < 0.0)
        throw ValidationError("synthetic curve must stay within [0, rated]");

    // Event schedule: alternating gaps and icing events.
    struct Event {
        std::size_t begin, end;
    };
    std::vector<Event> events;
    {
        Rng rng(seed, "synth.events");
        auto draw = [&](std::size_t lo, std::size_t hi) { return lo + static_cast<std::size_t>(rng.below(hi - lo + 1)); };
        std::size_t t = draw(config.gap_min_steps, config.gap_max_steps);
        while (t < length) {
            const std::size_t dur = draw(config.event_min_steps, config.event_max_steps);
            events.push_back({t, std::min(length, t + dur)});
            t += dur + draw(config.gap_min_steps, config.gap_max_steps);
        }
    }

    std::vector<double> degradation(length, 1.0);
    std::vector<std::uint8_t> icing(length, 0);
    for (const auto& e : events) {
        const std::size_t dur = e.end - e.begin;
        std::size_t onset = config.onset_steps;
        std::size_t recovery = config.recovery_steps;
        if (onset + recovery > dur) {
            onset = dur * onset / std::max<std::size_t>(1, onset + recovery);
            recovery = dur - onset;
        }
        const double drop = 1.0 - config.degradation_min;
        for (std::size_t k = 0; k < dur; ++k) {
            double d = config.degradation_min;
            if (k < onset) d = 1.0 - drop * static_cast<double>(k + 1) / static_cast<double>(onset);
            else if (k >= dur - recovery) d = config.degradation_min + drop * static_cast<double>(k - (dur - recovery) + 1) /
                                                                      static_cast<double>(recovery + 1);
            degradation[e.begin + k] = d;
            icing[e.begin + k] = 1;
        }
    }

    Rng wind_rng(seed, "synth.wind");
    Rng temp_rng(seed, "synth.temp");
    Rng power_rng(seed, "synth.power");
    Rng flutter_rng(seed, "synth.flutter");
    Rng ops_rng(seed, "synth.ops");
    Rng yaw_rng(seed, "synth.yaw");

    const double wind_sd = config.wind_sigma_ms / std::sqrt(1.0 - config.wind_ar * config.wind_ar);
    double wind_dev = wind_rng.normal(0.0, wind_sd);
    double temp_dev = temp_rng.normal(0.0, 0.5);
    constexpr double flutter_ar = 0.9;
    double flutter = flutter_rng.normal(0.0, 1.0);
    double yaw = yaw_rng.uniform(0.0, 360.0);

    SeriesFrame frame;
    frame.rated_power_kw = config.rated_power_kw;
    frame.reserve(length);
    const double rated = config.rated_power_kw;
    constexpr double day = 1440.0;
    for (std::size_t t = 0; t < length; ++t) {
        const double phase = 2.0 * std::numbers::pi * static_cast<double>(t) / day;
        if (t > 0) wind_dev = config.wind_ar * wind_dev + wind_rng.normal(0.0, config.wind_sigma_ms);
        const double wind = std::clamp(config.wind_mean_ms + wind_dev + config.wind_diurnal_ms * std::sin(phase), 0.0, 25.0);

        if (t > 0) temp_dev = 0.99 * temp_dev + temp_rng.normal(0.0, 0.07);
        const double temp = -2.0 + 3.0 * std::sin(phase - std::numbers::pi / 2.0) + temp_dev - (icing[t] ? 3.0 : 0.0);

        if (t > 0) flutter = flutter_ar * flutter + flutter_rng.normal(0.0, std::sqrt(1.0 - flutter_ar * flutter_ar));
        const double base = synth_baseline_kw(config, wind);
        const double centre = degradation[t] * base;
        const double white = power_rng.normal();
        double noise = icing[t] ? centre * config.icing_flutter * flutter + config.icing_noise_kw * white
                                : config.power_noise_kw * white;
        // Symmetric clamp keeps the conditional mean at `centre` and the value in [0, rated].
        const double room = std::min(centre, rated - centre);
        noise = std::clamp(noise, -room, room);
        const double power = std::clamp(centre + noise, 0.0, rated);

        const double pitch = std::max(0.0, (wind - 11.5) * 3.0) + ops_rng.normal(0.0, 0.2) + (icing[t] ? 0.8 : 0.0);
        const double rpm_target = wind < 3.0 ? 250.0 * wind : std::min(1800.0, 700.0 + 90.0 * wind);
        const double gen = std::max(0.0, rpm_target * (0.85 + 0.15 * degradation[t]) + ops_rng.normal(0.0, 12.0));
        yaw = std::fmod(yaw + yaw_rng.normal(0.0, 0.4) + 360.0, 360.0);

        frame.push_row(config.start_epoch_s + static_cast<std::int64_t>(t) * 60,
                       {power, wind, temp, pitch, yaw, gen}, icing[t] != 0);
    }
    return frame;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    const auto n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

FeatureSelection select_features(const SeriesFrame& frame, Channel target, double threshold) {
    if (frame.size() < 2) throw InsufficientDataError("feature selection needs at least 2 rows");
    const auto& y = frame[target];
    FeatureSelection out;
    auto has_variance = [](const std::vector<double>& v) {
        return std::any_of(v.begin(), v.end(), [&](double a) { return a != v.front(); });
    };
    if (!has_variance(y)) throw InsufficientDataError("target channel has zero variance");
    for (Channel c : kAllChannels) {
        if (c == target) continue;
        const auto& x = frame[c];
        if (!has_variance(x)) {
            out.zero_variance.push_back(c);
            continue;
        }
        const double r = pearson(x, y);
        if (std::abs(r) >= threshold) out.retained.push_back({c, r});
    }
    std::stable_sort(out.retained.begin(), out.retained.end(),
                     [](const FeatureScore& a, const FeatureScore& b) { return std::abs(a.correlation) > std::abs(b.correlation); });
    return out;
}

}  // namespace icegen
