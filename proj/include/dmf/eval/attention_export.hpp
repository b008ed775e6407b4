#pragma once

#include "dmf/numerics/dense.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace dmf::eval {

/// Attention dump: 8 ASCII header lines (magic, heads, rows, cols, layer,
/// sample, dtype, end) followed by heads*rows*cols little-endian float32.
struct AttentionDump {
  int layer = 0;
  std::string sample;
  std::vector<MatrixXd> heads;
};

void write_attention(const AttentionDump& dump, const std::filesystem::path& path);
AttentionDump read_attention(const std::filesystem::path& path);

/// CLS row without the CLS column, reshaped to the patch grid (raster order).
MatrixXd cls_patch_map(const MatrixXd& head, int grid_h, int grid_w);

/// 8-bit PGM of `m` scaled so its maximum maps to 255.
void write_pgm(const MatrixXd& m, const std::filesystem::path& path);

}  // namespace dmf::eval
