#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "apnt/imaging.hpp"

namespace apnt {

using Rgbe = std::array<std::uint8_t, 4>;

/// value = mantissa * 2^(E - 136) per channel; E == 0 encodes black.
std::array<double, 3> rgbe_to_float(const Rgbe& px);
/// Shared-exponent encoding with round-to-nearest mantissas; the largest
/// channel keeps a relative error of at most 1/256.
Rgbe float_to_rgbe(double r, double g, double b);

/// Radiance .hdr container (flat or RLE scanlines, -Y H +X W orientation).
RadianceMap decode_rgbe(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_rgbe(const RadianceMap& img);

RadianceMap read_hdr(const std::filesystem::path& path);
void write_hdr(const std::filesystem::path& path, const RadianceMap& img);

}  // namespace apnt
