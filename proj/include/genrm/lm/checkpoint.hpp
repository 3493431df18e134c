#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "genrm/lm/model.hpp"

namespace genrm::lm {

struct Provenance {
  std::string method;     // e.g. "GENRM", "STAR-DPO", "INIT"
  int iteration = 0;      // 0 outside the iterative protocol
  std::uint64_t seed = 0;
  std::string parent_id;  // empty for a root checkpoint
};

/// A model snapshot plus where it came from.
struct Checkpoint {
  Model model;
  Provenance provenance;

  /// Digest of the serialized bytes; a prefix of it is the checkpoint id.
  std::string digest() const;
  std::string id() const;
};

class CheckpointFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary layout, all integers little-endian:
//   "PGLB" | u32 version | config (7 x i32) | provenance
//   | u32 count | manifest: count x (name, u32 rank, u32 extents..., u64 offset, u64 length)
//   | u64 payload length | payload: f32 values
// Strings are u32 byte length followed by UTF-8 bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Rounds every parameter to binary32, matching what a save/load round
/// trip yields.
void round_to_storage_precision(Model& model);

}  // namespace genrm::lm
