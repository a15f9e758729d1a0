#pragma once

#include <filesystem>
#include <iosfwd>

#include "mcn/tensor.hpp"

namespace mcn {

/// 8-bit binary PPM (P6) preview of a linear RGB image shaped (3, H, W) or
/// (1, 3, H, W). Values are clamped to [0, 1] and encoded with gamma 1/2.2.
void write_ppm(std::ostream& out, const Tensor<float>& rgb);
void save_ppm(const std::filesystem::path& path, const Tensor<float>& rgb);

}  // namespace mcn
