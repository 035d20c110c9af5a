#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dpcn::data {

inline constexpr int kCheckpointVersion = 1;

/// Versioned container: a text header (tag, version, config digest, phase
/// marker, config text, RNG states) followed by named little-endian float
/// arrays and a SHA-256 trailer over everything before it.
struct Checkpoint {
  int version = kCheckpointVersion;
  std::string config_digest;
  std::string config_text;
  /// Number of completed training phases (0..3); checkpoints are only ever
  /// taken at phase boundaries.
  int completed_phase = 0;
  std::vector<std::pair<std::string, std::string>> rng_states;
  std::vector<std::pair<std::string, std::vector<float>>> arrays;

  const std::vector<float>& array(const std::string& name) const;
  const std::string& rng_state(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
/// Throws std::runtime_error on a missing, truncated, corrupt or
/// version-mismatched file.
Checkpoint load_checkpoint(const std::string& path);

std::string sha256_hex(std::string_view bytes);

}  // namespace dpcn::data
