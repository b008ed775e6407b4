#pragma once

#include "dmf/numerics/dense.hpp"

#include <filesystem>
#include <stdexcept>

namespace dmf::io {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes an H x (3W) interleaved RGB matrix with values in [0, 1] as 8-bit PNG.
void write_png(const std::filesystem::path& path, const MatrixXd& rgb);

/// 8-bit grayscale PNG from an H x W matrix in [0, 1].
void write_png_gray(const std::filesystem::path& path, const MatrixXd& gray);

/// Reads an 8-bit RGB (or gray/alpha, converted) PNG into H x (3W) in [0, 1].
MatrixXd read_png(const std::filesystem::path& path);

}  // namespace dmf::io
