#include "dmf/trainer/checkpoint.hpp"

#include "dmf/synthdata/dataset.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace dmf::trainer {

namespace {

using nlohmann::json;
using Kind = CheckpointError::Kind;

constexpr const char* kMagic = "DMFCKPT";

void append_floats(std::string& out, const MatrixXd& m) {
  for (Index i = 0; i < m.size(); ++i) {
    const float f = static_cast<float>(m.data()[i]);
    std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    char buf[4];
    std::memcpy(buf, &bits, 4);
    out.append(buf, 4);
  }
}

void read_floats(const char* src, MatrixXd& m) {
  for (Index i = 0; i < m.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, src + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
    m.data()[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
}

std::uint32_t crc_of(const std::string& bytes, std::size_t offset, std::size_t len) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data() + offset), static_cast<uInt>(len)));
}

}  // namespace

void round_to_persisted_precision(ParamStore& params) {
  for (auto& [_, e] : params) {
    e.value = e.value.cast<float>().cast<double>();
    e.velocity = e.velocity.cast<float>().cast<double>();
  }
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string payload;
  json entries = json::array();
  for (const auto& [path, e] : ckpt.params) {
    const std::size_t offset = payload.size();
    append_floats(payload, e.value);
    append_floats(payload, e.velocity);
    const std::size_t len = payload.size() - offset;
    entries.push_back({{"path", path},
                       {"shape", e.shape},
                       {"rows", e.value.rows()},
                       {"cols", e.value.cols()},
                       {"trainable", e.trainable},
                       {"decay", e.decay},
                       {"offset", offset},
                       {"bytes", len},
                       {"crc32", crc_of(payload, offset, len)}});
  }
  const json manifest = {{"format_version", kCheckpointVersion},
                         {"meta", ckpt.meta},
                         {"params", entries},
                         {"payload_bytes", payload.size()}};
  const std::string text = manifest.dump();
  std::ostringstream os;
  os << kMagic << " " << kCheckpointVersion << "\n" << text.size() << "\n" << text;
  return os.str() + payload;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  try {
    synth::write_file_atomic(path, serialize_checkpoint(ckpt));
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::io, std::string("cannot write checkpoint: ") + e.what());
  }
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  std::istringstream is(bytes);
  std::string magic;
  int version = 0;
  if (!(is >> magic) || magic != kMagic) throw CheckpointError(Kind::format, "checkpoint: bad magic header");
  if (!(is >> version)) throw CheckpointError(Kind::format, "checkpoint: missing format version");
  if (version != kCheckpointVersion)
    throw CheckpointError(Kind::version, "checkpoint: format version " + std::to_string(version) +
                                             " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  std::size_t manifest_len = 0;
  if (!(is >> manifest_len) || is.get() != '\n') throw CheckpointError(Kind::format, "checkpoint: bad manifest length");
  const std::size_t manifest_at = static_cast<std::size_t>(is.tellg());
  if (manifest_at + manifest_len > bytes.size())
    throw CheckpointError(Kind::truncated, "checkpoint: truncated manifest");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(manifest_at, manifest_len));
  } catch (const json::parse_error& e) {
    throw CheckpointError(Kind::format, std::string("checkpoint: manifest is not valid JSON: ") + e.what());
  }
  const std::size_t payload_at = manifest_at + manifest_len;
  const std::size_t payload_len = bytes.size() - payload_at;
  Checkpoint ckpt;
  try {
    if (manifest.at("format_version").get<int>() != kCheckpointVersion)
      throw CheckpointError(Kind::version, "checkpoint: manifest format version mismatch");
    const auto expected = manifest.at("payload_bytes").get<std::size_t>();
    if (payload_len != expected)
      throw CheckpointError(Kind::truncated, "checkpoint: payload holds " + std::to_string(payload_len) +
                                                 " bytes, manifest expects " + std::to_string(expected));
    const std::string payload = bytes.substr(payload_at);
    ckpt.meta = manifest.at("meta");
    for (const auto& e : manifest.at("params")) {
      const auto path = e.at("path").get<std::string>();
      const auto rows = e.at("rows").get<Index>(), cols = e.at("cols").get<Index>();
      const auto offset = e.at("offset").get<std::size_t>(), len = e.at("bytes").get<std::size_t>();
      if (len != static_cast<std::size_t>(rows * cols) * 8 || offset + len > payload.size())
        throw CheckpointError(Kind::integrity, "checkpoint: '" + path + "' payload length disagrees with its shape");
      if (crc_of(payload, offset, len) != e.at("crc32").get<std::uint32_t>())
        throw CheckpointError(Kind::integrity, "checkpoint: payload checksum mismatch for '" + path + "'");
      MatrixXd value(rows, cols), velocity(rows, cols);
      read_floats(payload.data() + offset, value);
      read_floats(payload.data() + offset + len / 2, velocity);
      auto& entry = ckpt.params.add(path, std::move(value), e.at("shape").get<std::vector<Index>>(),
                                    e.at("trainable").get<bool>(), e.at("decay").get<bool>());
      entry.velocity = std::move(velocity);
    }
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::format, std::string("checkpoint: malformed manifest: ") + e.what());
  } catch (const ShapeError& e) {
    throw CheckpointError(Kind::shape, std::string("checkpoint: ") + e.what());
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::io, "cannot open checkpoint '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return deserialize_checkpoint(os.str());
}

void validate_against(const ParamStore& loaded, const ParamStore& reference,
                      const std::vector<std::string>& skip_prefixes) {
  auto skipped = [&](const std::string& p) {
    for (const auto& s : skip_prefixes)
      if (p.compare(0, s.size(), s) == 0) return true;
    return false;
  };
  for (const auto& [path, ref] : reference) {
    if (skipped(path)) continue;
    if (!loaded.contains(path)) throw CheckpointError(Kind::shape, "checkpoint: missing parameter '" + path + "'");
    const auto& got = loaded.at(path);
    if (got.shape != ref.shape)
      throw CheckpointError(Kind::shape, "checkpoint: parameter '" + path + "' has shape " + shape_str(got.shape) +
                                             ", configuration expects " + shape_str(ref.shape));
  }
  for (const auto& [path, _] : loaded)
    if (!skipped(path) && !reference.contains(path))
      throw CheckpointError(Kind::shape, "checkpoint: unexpected parameter '" + path + "' for this configuration");
}

std::string checkpoint_id(const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", crc_of(bytes, 0, bytes.size()));
  return buf;
}

}  // namespace dmf::trainer
