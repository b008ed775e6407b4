#include "dmf/io/png.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

namespace dmf::io {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_rows(const std::filesystem::path& path, int width, int height, int color_type,
                const std::vector<std::uint8_t>& bytes, int channels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw ImageIoError("cannot open '" + path.string() + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw ImageIoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ImageIoError("libpng failed writing '" + path.string() + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, bytes.data() + static_cast<std::size_t>(y) * width * channels);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::filesystem::path& path, const MatrixXd& rgb) {
  if (rgb.cols() % 3 != 0) throw ImageIoError("write_png: column count is not a multiple of 3");
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(rgb.size()));
  for (Index i = 0; i < rgb.size(); ++i) bytes[static_cast<std::size_t>(i)] = quantize(rgb.data()[i]);
  write_rows(path, static_cast<int>(rgb.cols() / 3), static_cast<int>(rgb.rows()), PNG_COLOR_TYPE_RGB, bytes, 3);
}

void write_png_gray(const std::filesystem::path& path, const MatrixXd& gray) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(gray.size()));
  for (Index i = 0; i < gray.size(); ++i) bytes[static_cast<std::size_t>(i)] = quantize(gray.data()[i]);
  write_rows(path, static_cast<int>(gray.cols()), static_cast<int>(gray.rows()), PNG_COLOR_TYPE_GRAY, bytes, 1);
}

MatrixXd read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw ImageIoError("cannot read PNG '" + path.string() + "': " + image.message);
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw ImageIoError("cannot decode PNG '" + path.string() + "': " + image.message);
  }
  MatrixXd out(image.height, 3 * image.width);
  for (Index i = 0; i < out.size(); ++i) out.data()[i] = buffer[static_cast<std::size_t>(i)] / 255.0;
  return out;
}

}  // namespace dmf::io
