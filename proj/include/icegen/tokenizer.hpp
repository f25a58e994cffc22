#pragma once

#include "icegen/series.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace icegen {

using Token = std::uint16_t;

/// Quantization of one channel into a contiguous block of the shared vocabulary.
struct ChannelCodec {
    Channel channel = Channel::Power;
    std::size_t offset = 0;   // first global token id of the block
    std::size_t bins = 0;     // nominal block size
    double range_min = 0.0;   // normalization range (non-icing statistics)
    double range_max = 0.0;
    /// Interior quantile edges, strictly increasing, all > range_min.
    /// Empty for the power channel (mu-law) and for degenerate channels.
    std::vector<double> edges;
    bool degenerate = false;  // constant in the fitting data: everything maps to the first bin

    /// Bins that can actually be produced (edges.size() + 1 for quantile channels).
    std::size_t effective_bins() const;
};

struct TokenizerSpec {
    double mu = 120.0;
    double rated_kw = 0.0;
    std::array<ChannelCodec, kChannelCount> codecs;
    std::size_t vocab_size = 0;

    const ChannelCodec& codec(Channel c) const { return codecs[index_of(c)]; }
    std::size_t power_bins() const { return codec(Channel::Power).bins; }
};

struct TokenizerOptions {
    double mu = 120.0;
    std::size_t power_bins = 256;
    std::size_t wind_bins = 64;
    std::size_t temperature_bins = 16;
    std::size_t operational_bins = 16;  // pitch, yaw, generator speed
};

/// Normalization ranges and quantile edges from non-icing rows.
TokenizerSpec fit_spec(const SeriesFrame& non_icing, const TokenizerOptions& options = {});

/// Empirical quantile (linear interpolation between order statistics) of sorted data.
double sorted_quantile(std::span<const double> sorted, double q);

Token mu_law_encode(double power_kw, const TokenizerSpec& spec);
/// Midpoint, in power units, of the token's mu-law bin.
double mu_law_decode(Token token, const TokenizerSpec& spec);
/// Normalized power at the lower edge of mu-law code bin k (k in [0, bins]).
double mu_law_edge(std::size_t k, const TokenizerSpec& spec);
/// Width in kW of the mu-law bin that contains `power_kw`.
double mu_law_bin_width_kw(double power_kw, const TokenizerSpec& spec);

Token quantile_encode(double value, Channel channel, const TokenizerSpec& spec);
/// Midpoint of the token's bin; tokens beyond the effective bins raise a domain error.
double quantile_decode(Token token, Channel channel, const TokenizerSpec& spec);

/// Channel-aware encode/decode dispatch.
Token encode_value(double value, Channel channel, const TokenizerSpec& spec);
double decode_value(Token token, Channel channel, const TokenizerSpec& spec);

/// Flattened token stream, one [power, wind, temp, pitch, yaw, gen] tuple per step.
struct TokenSequence {
    std::size_t steps = 0;
    std::vector<Token> tokens;

    static constexpr std::size_t channels = kChannelCount;
    Token at(std::size_t step, Channel c) const { return tokens[step * channels + index_of(c)]; }
};

std::array<Token, kChannelCount> tokenize_row(const std::array<double, kChannelCount>& values, const TokenizerSpec& spec);
TokenSequence tokenize(const SeriesFrame& frame, const TokenizerSpec& spec);
TokenSequence tokenize(const SeriesFrame& frame, std::size_t begin, std::size_t end, const TokenizerSpec& spec);

/// Channel that owns a global token id.
Channel channel_of(Token token, const TokenizerSpec& spec);

}  // namespace icegen
