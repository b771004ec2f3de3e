#pragma once

#include <filesystem>
#include <vector>

#include "constyle/tensor.hpp"

namespace constyle {

/// Smooth synthetic scene in [0,1]: a colour gradient, soft-edged discs and
/// rectangles, and a low-frequency ripple. Fully determined by the seed.
Tensor synthetic_image(std::size_t height, std::size_t width, std::uint64_t seed);

/// Writes `count` images as img_000.png, ... into `dir` together with a
/// manifest.txt listing them. Returns the manifest path.
std::filesystem::path write_synthetic_corpus(const std::filesystem::path& dir, std::size_t count, std::size_t height,
                                             std::size_t width, std::uint64_t seed);

}  // namespace constyle
