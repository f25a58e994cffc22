#include "icegen/tokenizer.hpp"

#include "icegen/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace icegen {

std::size_t ChannelCodec::effective_bins() const {
    if (channel == Channel::Power) return bins;
    return degenerate ? 1 : edges.size() + 1;
}

double sorted_quantile(std::span<const double> sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

TokenizerSpec fit_spec(const SeriesFrame& frame, const TokenizerOptions& options) {
    if (frame.size() < 256) throw InsufficientDataError("tokenizer fit needs at least 256 non-icing rows");
    if (!(options.mu > 0.0)) throw ValidationError("mu must be positive");
    if (!(frame.rated_power_kw > 0.0)) throw ValidationError("frame has no rated power");

    TokenizerSpec spec;
    spec.mu = options.mu;
    spec.rated_kw = frame.rated_power_kw;
    std::size_t offset = 0;
    for (Channel c : kAllChannels) {
        ChannelCodec codec;
        codec.channel = c;
        codec.offset = offset;
        if (c == Channel::Power) {
            codec.bins = options.power_bins;
            codec.range_min = 0.0;
            codec.range_max = frame.rated_power_kw;
        } else {
            codec.bins = c == Channel::WindSpeed     ? options.wind_bins
                         : c == Channel::Temperature ? options.temperature_bins
                                                     : options.operational_bins;
            std::vector<double> sorted = frame[c];
            std::sort(sorted.begin(), sorted.end());
            codec.range_min = sorted.front();
            codec.range_max = sorted.back();
            if (codec.range_max == codec.range_min) {
                codec.degenerate = true;
            } else {
                for (std::size_t k = 1; k < codec.bins; ++k) {
                    const double e = sorted_quantile(sorted, static_cast<double>(k) / static_cast<double>(codec.bins));
                    // Ties collapse edges; an edge at the minimum would leave an empty first bin.
                    if (e <= codec.range_min) continue;
                    if (!codec.edges.empty() && e <= codec.edges.back()) continue;
                    codec.edges.push_back(e);
                }
            }
        }
        if (codec.bins == 0) throw ValidationError("channel bin count must be positive");
        offset += codec.bins;
        spec.codecs[index_of(c)] = std::move(codec);
    }
    spec.vocab_size = offset;
    if (spec.vocab_size > 65536) throw ValidationError("vocabulary does not fit 16-bit token ids");
    return spec;
}

double mu_law_edge(std::size_t k, const TokenizerSpec& spec) {
    const double code = static_cast<double>(k) / static_cast<double>(spec.power_bins());
    return (std::pow(1.0 + spec.mu, code) - 1.0) / spec.mu;
}

Token mu_law_encode(double power_kw, const TokenizerSpec& spec) {
    const std::size_t bins = spec.power_bins();
    double x = power_kw / spec.rated_kw;
    if (!(x > 0.0)) x = 0.0;  // also maps NaN to zero
    x = std::min(x, 1.0);
    const double c = std::log1p(spec.mu * x) / std::log1p(spec.mu);
    const auto k = std::min(static_cast<std::size_t>(std::floor(c * static_cast<double>(bins))), bins - 1);
    return static_cast<Token>(spec.codec(Channel::Power).offset + k);
}

double mu_law_decode(Token token, const TokenizerSpec& spec) {
    const auto& codec = spec.codec(Channel::Power);
    if (token < codec.offset || token >= codec.offset + codec.bins)
        throw DomainError("token " + std::to_string(token) + " is not a power token");
    const std::size_t k = token - codec.offset;
    return 0.5 * (mu_law_edge(k, spec) + mu_law_edge(k + 1, spec)) * spec.rated_kw;
}

double mu_law_bin_width_kw(double power_kw, const TokenizerSpec& spec) {
    const std::size_t k = mu_law_encode(power_kw, spec) - spec.codec(Channel::Power).offset;
    return (mu_law_edge(k + 1, spec) - mu_law_edge(k, spec)) * spec.rated_kw;
}

Token quantile_encode(double value, Channel channel, const TokenizerSpec& spec) {
    const auto& codec = spec.codec(channel);
    const auto bin = static_cast<std::size_t>(std::upper_bound(codec.edges.begin(), codec.edges.end(), value) -
                                              codec.edges.begin());
    return static_cast<Token>(codec.offset + bin);
}

double quantile_decode(Token token, Channel channel, const TokenizerSpec& spec) {
    const auto& codec = spec.codec(channel);
    if (token < codec.offset || token >= codec.offset + codec.effective_bins())
        throw DomainError("token " + std::to_string(token) + " outside the reachable bins of " +
                          std::string(channel_name(channel)));
    const std::size_t k = token - codec.offset;
    const std::size_t m = codec.edges.size();
    const double lo = k == 0 ? codec.range_min : codec.edges[k - 1];
    const double hi = k == m ? codec.range_max : codec.edges[k];
    return 0.5 * (lo + hi);
}

Token encode_value(double value, Channel channel, const TokenizerSpec& spec) {
    return channel == Channel::Power ? mu_law_encode(value, spec) : quantile_encode(value, channel, spec);
}

double decode_value(Token token, Channel channel, const TokenizerSpec& spec) {
    return channel == Channel::Power ? mu_law_decode(token, spec) : quantile_decode(token, channel, spec);
}

std::array<Token, kChannelCount> tokenize_row(const std::array<double, kChannelCount>& values, const TokenizerSpec& spec) {
    std::array<Token, kChannelCount> out{};
    for (Channel c : kAllChannels) out[index_of(c)] = encode_value(values[index_of(c)], c, spec);
    return out;
}

TokenSequence tokenize(const SeriesFrame& frame, std::size_t begin, std::size_t end, const TokenizerSpec& spec) {
    for (Channel c : kAllChannels) {
        if (spec.codec(c).channel != c) throw SchemaError("tokenizer spec channel order mismatch");
        if (frame[c].size() != frame.size()) throw SchemaError("frame channel " + std::string(channel_name(c)) + " has wrong length");
    }
    if (begin > end || end > frame.size()) throw ShapeError("tokenize row range out of bounds");
    TokenSequence seq;
    seq.steps = end - begin;
    seq.tokens.reserve(seq.steps * kChannelCount);
    for (std::size_t i = begin; i < end; ++i) {
        for (Channel c : kAllChannels) seq.tokens.push_back(encode_value(frame[c][i], c, spec));
    }
    return seq;
}

TokenSequence tokenize(const SeriesFrame& frame, const TokenizerSpec& spec) {
    return tokenize(frame, 0, frame.size(), spec);
}

Channel channel_of(Token token, const TokenizerSpec& spec) {
    for (Channel c : kAllChannels) {
        const auto& codec = spec.codec(c);
        if (token >= codec.offset && token < codec.offset + codec.bins) return c;
    }
    throw DomainError("token " + std::to_string(token) + " outside the vocabulary");
}

}  // namespace icegen
