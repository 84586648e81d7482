#pragma once

#include <filesystem>
#include <string>

#include "monetlab/tensor.hpp"

namespace monetlab::store {

// .mst binary tensor format, all little-endian:
//   magic "MST1" | ndim u32 | dims[ndim] u32 | payload float32[prod(dims)]
// Values must be finite. The layout is fixed so fixtures stay bit-exact.

void write_tensor(const std::filesystem::path& path, const Tensor& t, bool durable = false);
Tensor read_tensor(const std::filesystem::path& path);

// 8-bit RGB PNG from a 3xHxW tensor with values in [0,1]; v -> round(v*255),
// halves rounding up.
void export_png(const Tensor& rgb, const std::filesystem::path& path);

// Small JSON file helpers shared by manifests, stats and reports.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace monetlab::store
