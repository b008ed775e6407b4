#include "dmf/eval/attention_export.hpp"

#include <cstdint>
#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dmf::eval {

namespace {

constexpr const char* kMagic = "DMFATTN 1";

void put_f32(std::string& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_f32(const std::string& in, std::size_t off) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

std::string expect_field(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line) || line.rfind(key + " ", 0) != 0)
    throw std::runtime_error("attention dump: expected header field '" + key + "'");
  return line.substr(key.size() + 1);
}

}  // namespace

void write_attention(const AttentionDump& dump, const std::filesystem::path& path) {
  if (dump.heads.empty()) throw std::invalid_argument("write_attention: no heads");
  const Index rows = dump.heads.front().rows(), cols = dump.heads.front().cols();
  std::ostringstream head;
  head << kMagic << "\n"
       << "heads " << dump.heads.size() << "\n"
       << "rows " << rows << "\n"
       << "cols " << cols << "\n"
       << "layer " << dump.layer << "\n"
       << "sample " << dump.sample << "\n"
       << "dtype float32-le\n"
       << "end\n";
  std::string bytes = head.str();
  for (const auto& h : dump.heads) {
    if (h.rows() != rows || h.cols() != cols) throw ShapeError("write_attention: heads differ in shape");
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) put_f32(bytes, h(r, c));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

AttentionDump read_attention(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(f, line) || line != kMagic) throw std::runtime_error("attention dump: bad magic");
  AttentionDump d;
  const auto heads = std::stoul(expect_field(f, "heads"));
  const auto rows = std::stol(expect_field(f, "rows"));
  const auto cols = std::stol(expect_field(f, "cols"));
  d.layer = std::stoi(expect_field(f, "layer"));
  d.sample = expect_field(f, "sample");
  expect_field(f, "dtype");
  if (!std::getline(f, line) || line != "end") throw std::runtime_error("attention dump: missing end line");
  const std::string payload((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (payload.size() != heads * static_cast<std::size_t>(rows * cols) * 4)
    throw std::runtime_error("attention dump: payload size does not match header");
  std::size_t off = 0;
  for (std::size_t h = 0; h < heads; ++h) {
    MatrixXd m(rows, cols);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c, off += 4) m(r, c) = get_f32(payload, off);
    d.heads.push_back(std::move(m));
  }
  return d;
}

MatrixXd cls_patch_map(const MatrixXd& head, int grid_h, int grid_w) {
  if (head.rows() < 1 || head.cols() != 1 + static_cast<Index>(grid_h) * grid_w)
    throw ShapeError("cls_patch_map: attention " + shape_str(head) + " does not fit a " + std::to_string(grid_h) +
                     "x" + std::to_string(grid_w) + " grid plus CLS");
  MatrixXd out(grid_h, grid_w);
  for (int y = 0; y < grid_h; ++y)
    for (int x = 0; x < grid_w; ++x) out(y, x) = head(0, 1 + y * grid_w + x);
  return out;
}

void write_pgm(const MatrixXd& m, const std::filesystem::path& path) {
  const double peak = m.size() > 0 ? m.maxCoeff() : 0.0;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << m.cols() << " " << m.rows() << "\n255\n";
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) {
      const double v = peak > 0.0 ? std::clamp(m(r, c) / peak, 0.0, 1.0) : 0.0;
      out.put(static_cast<char>(static_cast<unsigned char>(v * 255.0 + 0.5)));
    }
}

}  // namespace dmf::eval
