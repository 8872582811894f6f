#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "icll/adam.hpp"
#include "icll/model.hpp"

namespace icll {

// Binary checkpoint, all integers and floats little-endian:
//
//   offset  size  field
//   0       4     magic "ICLL"
//   4       4     u32 format version (= kCheckpointVersion)
//   8       4     u32 byte length L of the config JSON
//   12      L     UTF-8 JSON of ModelConfig (sorted keys, no whitespace)
//   12+L    8     u64 parameter count P
//   20+L    4P    f32 parameters in the model's canonical order
//   then, optionally:
//           4     tag "ADAM"
//           8     u64 optimizer step
//           4P    f32 first moments
//           4P    f32 second moments
//
// Nothing may follow the last section.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::vector<float> parameters;
  std::optional<AdamState> optimizer;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError (with byte offset) on bad magic, version, truncation,
// count mismatch or trailing bytes.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

void save_checkpoint(const TransformerModel<float>& model, const std::filesystem::path& path,
                     const AdamState* optimizer = nullptr);
TransformerModel<float> load_checkpoint(const std::filesystem::path& path);
TransformerModel<float> model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace icll
