#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "pulsemap/tensor.hpp"
#include "pulsemap/transform2d.hpp"

namespace pulsemap {

/// 8-bit quantization used by every export: round(255 * clamp(v, 0, 1)).
std::uint8_t quantize_unit(double v);

/// Binary P5 of a matrix whose values are already in [0, 1], top row first.
void write_pgm(const std::filesystem::path& path, const Matrix& unit_values);
Matrix read_pgm(const std::filesystem::path& path);

/// Binary P6 of an image.
void write_ppm(const std::filesystem::path& path, const ImageTensor& image);
ImageTensor read_ppm(const std::filesystem::path& path);

}  // namespace pulsemap
