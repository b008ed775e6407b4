#pragma once

#include "dmf/numerics/param_store.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

namespace dmf::trainer {

inline constexpr int kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, version, format, truncated, integrity, shape };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Parameters plus run metadata (config echo, stage, iteration, RNG state).
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  ParamStore params;
};

/// Rounds every value and velocity to the nearest float32, the precision
/// checkpoints persist.
void round_to_persisted_precision(ParamStore& params);

/// Single-file container:
///   "DMFCKPT <version>\n" "<manifest bytes>\n" <manifest JSON> <payload>
/// The manifest lists each parameter's path, shape, flags, payload offset and
/// CRC-32; the payload holds each parameter's value then velocity as
/// little-endian float32, in path order. Written via temp file + rename.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
std::string serialize_checkpoint(const Checkpoint& ckpt);

Checkpoint load_checkpoint(const std::filesystem::path& path);
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// CRC-32 of the serialized checkpoint, as 8 hex digits.
std::string checkpoint_id(const Checkpoint& ckpt);

/// Throws CheckpointError(shape) naming the first path that is missing,
/// unexpected, or shaped differently from `reference`. Paths starting with
/// any of `skip_prefixes` are ignored.
void validate_against(const ParamStore& loaded, const ParamStore& reference,
                      const std::vector<std::string>& skip_prefixes = {});

}  // namespace dmf::trainer
