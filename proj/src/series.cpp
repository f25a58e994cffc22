#include "icegen/series.hpp"

#include <algorithm>

namespace icegen {

std::string_view channel_name(Channel c) {
    switch (c) {
    case Channel::Power: return "active_power";
    case Channel::WindSpeed: return "wind_speed";
    case Channel::Temperature: return "ambient_temperature";
    case Channel::Pitch: return "pitch_angle";
    case Channel::Yaw: return "yaw_position";
    case Channel::GenSpeed: return "generator_speed";
    }
    return "?";
}

std::string_view channel_column(Channel c) {
    switch (c) {
    case Channel::Power: return "power_kw";
    case Channel::WindSpeed: return "wind_ms";
    case Channel::Temperature: return "temp_c";
    case Channel::Pitch: return "pitch_deg";
    case Channel::Yaw: return "yaw_deg";
    case Channel::GenSpeed: return "gen_rpm";
    }
    return "?";
}

std::pair<std::size_t, std::size_t> SeriesFrame::segment_of(std::size_t row) const {
    auto it = std::upper_bound(segment_starts.begin(), segment_starts.end(), row);
    const std::size_t begin = *(it - 1);
    const std::size_t end = it == segment_starts.end() ? size() : *it;
    return {begin, end};
}

bool SeriesFrame::contiguous(std::size_t i) const {
    if (i + 1 >= size()) return false;
    if (std::binary_search(segment_starts.begin(), segment_starts.end(), i + 1)) return false;
    return timestamps[i + 1] - timestamps[i] == 60;
}

void SeriesFrame::reserve(std::size_t n) {
    timestamps.reserve(n);
    for (auto& c : channels) c.reserve(n);
    icing.reserve(n);
}

void SeriesFrame::push_row(std::int64_t ts, const std::array<double, kChannelCount>& values, bool icing_flag) {
    if (timestamps.empty() || ts - timestamps.back() != 60) segment_starts.push_back(timestamps.size());
    timestamps.push_back(ts);
    for (std::size_t c = 0; c < kChannelCount; ++c) channels[c].push_back(values[c]);
    icing.push_back(icing_flag ? 1 : 0);
}

namespace {

std::array<double, kChannelCount> row_values(const SeriesFrame& f, std::size_t i) {
    std::array<double, kChannelCount> v{};
    for (std::size_t c = 0; c < kChannelCount; ++c) v[c] = f.channels[c][i];
    return v;
}

}  // namespace

SeriesFrame slice(const SeriesFrame& frame, std::size_t begin, std::size_t end) {
    SeriesFrame out;
    out.rated_power_kw = frame.rated_power_kw;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        const bool new_segment = i == begin || !frame.contiguous(i - 1);
        if (new_segment) out.segment_starts.push_back(out.size());
        out.timestamps.push_back(frame.timestamps[i]);
        for (std::size_t c = 0; c < kChannelCount; ++c) out.channels[c].push_back(frame.channels[c][i]);
        out.icing.push_back(frame.icing[i]);
    }
    return out;
}

SeriesFrame filter_icing(const SeriesFrame& frame, bool icing) {
    SeriesFrame out;
    out.rated_power_kw = frame.rated_power_kw;
    bool prev_kept = false;
    for (std::size_t i = 0; i < frame.size(); ++i) {
        const bool keep = (frame.icing[i] != 0) == icing;
        if (keep) {
            if (!prev_kept || !frame.contiguous(i - 1)) out.segment_starts.push_back(out.size());
            out.timestamps.push_back(frame.timestamps[i]);
            const auto v = row_values(frame, i);
            for (std::size_t c = 0; c < kChannelCount; ++c) out.channels[c].push_back(v[c]);
            out.icing.push_back(frame.icing[i]);
        }
        prev_kept = keep;
    }
    return out;
}

}  // namespace icegen
