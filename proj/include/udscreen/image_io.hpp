#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "udscreen/core.hpp"

namespace udscreen {

std::vector<std::uint8_t> encode_png(const RgbImage& image);
RgbImage decode_png(const std::vector<std::uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_png(const std::filesystem::path& path);

}  // namespace udscreen
