#pragma once

#include <filesystem>

#include "osp/taxonomy.hpp"
#include "osp/tensor.hpp"

namespace osp {

// Binary netpbm rasters, maxval 255. Images are [H,W,3] tensors in [0,1] and
// quantize to bytes on write; masks store raw class ids. read(write(x)) is the
// identity on the byte level.

void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

void write_pgm(const std::filesystem::path& path, const LabelMask& mask);
LabelMask read_pgm(const std::filesystem::path& path);

}  // namespace osp
