#pragma once

#include "icegen/series.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <array>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace icegen {

/// Maps canonical channel keys (timestamp, power_kw, wind_ms, temp_c, pitch_deg,
/// yaw_deg, gen_rpm, icing) to the header names used in a particular file.
/// Keys without an entry use the canonical name.
using ChannelSchema = std::map<std::string, std::string>;

struct LoadOptions {
    ChannelSchema schema;
    /// Nameplate rating. Zero means: take it from a `# rated_power_kw=` comment
    /// line, else from the maximum observed power.
    double rated_power_kw = 0.0;
    /// Gaps up to this many seconds are linearly interpolated; longer gaps split segments.
    std::int64_t max_interp_gap_s = 300;
};

struct LoadStats {
    std::size_t rows_read = 0;
    std::size_t rows_dropped = 0;   // unparseable or non-finite values
    std::size_t values_clipped = 0; // power outside [0, rated]
    std::size_t rows_interpolated = 0;
    std::size_t segments = 0;
};

struct LoadResult {
    SeriesFrame frame;
    LoadStats stats;
};

/// Reads a SCADA CSV, clips power to [0, rated], resamples to 1-minute means
/// and fills short gaps.
LoadResult load_csv(const std::filesystem::path& path, const LoadOptions& options = {});
LoadResult read_csv(std::istream& in, const LoadOptions& options = {});

/// Writes the canonical CSV layout (with a rated-power comment line).
void write_csv(const SeriesFrame& frame, const std::filesystem::path& path);
void write_csv(const SeriesFrame& frame, std::ostream& out);

/// Half-open row intervals of a chronological split.
struct SplitIndex {
    std::pair<std::size_t, std::size_t> train;
    std::pair<std::size_t, std::size_t> val;
    std::pair<std::size_t, std::size_t> test;
};

/// Floor-then-remainder split: each of the first two parts gets floor(f * n)
/// rows, the test part takes the rest.
SplitIndex chrono_split(std::size_t length, const std::array<double, 3>& fractions);
inline SplitIndex chrono_split(const SeriesFrame& frame, const std::array<double, 3>& fractions) {
    return chrono_split(frame.size(), fractions);
}

struct SynthConfig {
    double rated_power_kw = 2000.0;
    // Logistic baseline curve used to produce non-icing power.
    double curve_low_kw = 0.0;
    double curve_high_kw = 2000.0;
    double curve_mid_ms = 8.5;
    double curve_scale_ms = 1.3;

    double wind_mean_ms = 8.0;
    double wind_ar = 0.98;
    double wind_sigma_ms = 0.35;
    double wind_diurnal_ms = 1.0;

    double power_noise_kw = 25.0;        // additive noise outside icing
    double icing_noise_kw = 70.0;        // additive noise inside icing
    double icing_flutter = 0.08;         // relative AR(1) fluctuation of the degraded output

    double degradation_min = 0.45;       // holding value of the degradation factor
    std::size_t onset_steps = 60;
    std::size_t recovery_steps = 90;
    std::size_t event_min_steps = 300;
    std::size_t event_max_steps = 700;
    std::size_t gap_min_steps = 200;
    std::size_t gap_max_steps = 600;

    // Minimum length check: length >= 2 * context_steps + horizon.
    std::size_t context_steps = 96;
    std::size_t horizon = 24;

    std::int64_t start_epoch_s = 1704067200;  // 2024-01-01T00:00:00Z
};

/// Synthetic icing-event SCADA generator. Deterministic in `seed`; wind and
/// the event schedule use their own streams so they do not change with the
/// degradation settings.
SeriesFrame synth_icing(const SynthConfig& config, std::size_t length, std::uint64_t seed);

/// Logistic baseline used by the generator, before noise and degradation.
double synth_baseline_kw(const SynthConfig& config, double wind_ms);

struct FeatureScore {
    Channel channel;
    double correlation;
};

struct FeatureSelection {
    std::vector<FeatureScore> retained;  // sorted by descending |r|
    std::vector<Channel> zero_variance;  // excluded, reported as warnings
};

double pearson(std::span<const double> x, std::span<const double> y);

FeatureSelection select_features(const SeriesFrame& frame, Channel target, double threshold);

}  // namespace icegen
