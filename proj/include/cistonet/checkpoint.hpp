#pragma once

#include <optional>
#include <string>

#include "cistonet/stonet.hpp"

namespace cistonet {

// Versioned JSON checkpoint: variant tag, module specs, flattened parameter
// arrays at full double precision, noise variances, seed lineage and an
// FNV-1a payload checksum. Round trip is lossless.
inline constexpr const char* kCheckpointVersion = "ci-stonet-checkpoint-1";

struct Checkpoint {
  StoNetModel model;
  double sigma_z2_hat = -1.0;  // post-training Eq-style re-estimate, < 0 if unset
};

std::string checkpoint_to_json(const Checkpoint& ckpt);
Checkpoint checkpoint_from_json(const std::string& text);

void checkpoint_save(const Checkpoint& ckpt, const std::string& path);
Checkpoint checkpoint_load(const std::string& path);

std::uint64_t fnv1a64(const std::string& s);

}  // namespace cistonet
