#pragma once

#include <filesystem>

#include "constyle/tensor.hpp"

namespace constyle {

/// Decodes an 8-bit RGB PNG into a (3,H,W) tensor in [0,1].
/// IoError if the file cannot be opened, ImageFormatError for anything that is
/// not 8-bit RGB.
Tensor read_png(const std::filesystem::path& path);

/// Writes a (3,H,W) tensor as 8-bit RGB, clamping to [0,1] and rounding.
void write_png(const std::filesystem::path& path, const Tensor& image);

/// Round-trip through 8-bit quantization without touching the disk.
Tensor quantize8(const Tensor& image);

}  // namespace constyle
