#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace icegen {

/// SCADA channels, in the fixed per-step token order.
enum class Channel : std::size_t {
    Power = 0,        // active power, kW
    WindSpeed = 1,    // m/s
    Temperature = 2,  // ambient, degC
    Pitch = 3,        // deg
    Yaw = 4,          // deg
    GenSpeed = 5,     // rpm
};

inline constexpr std::size_t kChannelCount = 6;

inline constexpr std::array<Channel, kChannelCount> kAllChannels = {
    Channel::Power, Channel::WindSpeed, Channel::Temperature,
    Channel::Pitch, Channel::Yaw,       Channel::GenSpeed};

std::string_view channel_name(Channel c);
/// CSV column name for a channel (power_kw, wind_ms, ...).
std::string_view channel_column(Channel c);

constexpr std::size_t index_of(Channel c) { return static_cast<std::size_t>(c); }

/// Multichannel 1-minute time series with per-step icing labels.
///
/// Rows are grouped into segments of uniform 60 s spacing. A new segment starts
/// wherever the source had a gap too long to interpolate; `segment_starts`
/// always begins with 0 when the frame is non-empty.
struct SeriesFrame {
    std::vector<std::int64_t> timestamps;  // epoch seconds
    std::array<std::vector<double>, kChannelCount> channels;
    std::vector<std::uint8_t> icing;
    std::vector<std::size_t> segment_starts;
    double rated_power_kw = 0.0;

    std::size_t size() const { return timestamps.size(); }
    bool empty() const { return timestamps.empty(); }

    std::vector<double>& operator[](Channel c) { return channels[index_of(c)]; }
    const std::vector<double>& operator[](Channel c) const { return channels[index_of(c)]; }

    /// Row range [begin, end) of the segment that holds `row`.
    std::pair<std::size_t, std::size_t> segment_of(std::size_t row) const;
    /// True when rows i and i+1 are one minute apart in the same segment.
    bool contiguous(std::size_t i) const;

    void reserve(std::size_t n);
    /// Appends one row; starts a new segment when it does not follow the previous row by 60 s.
    void push_row(std::int64_t ts, const std::array<double, kChannelCount>& values, bool icing_flag);
};

/// Rows [begin, end) as a new frame, segments preserved.
SeriesFrame slice(const SeriesFrame& frame, std::size_t begin, std::size_t end);
/// Only the rows whose icing flag equals `icing`; breaks in contiguity start new segments.
SeriesFrame filter_icing(const SeriesFrame& frame, bool icing);

}  // namespace icegen
