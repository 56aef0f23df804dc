#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lmbis/model.hpp"
#include "lmbis/optim.hpp"
#include "lmbis/train.hpp"

namespace lmbis {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// On-disk layout, all integers little-endian:
//   magic "LMBS" | u32 version | u32 digest_len | digest bytes | records...
// Each record: u32 name_len | name | 4 x u32 shape | f32 payload.
// Config values ride in record names ("cfg/<key>=<value>"), so a loaded file
// is self-describing: the digest is recomputed from them and verified.
struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    std::string digest;
    Model model;
    TrainConfig train_cfg;
    std::vector<EpochStats> history;
    std::optional<AdamState> optimizer;
};

std::string config_digest(const NetworkConfig& net, const TrainConfig& train);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

// Round-trips bit-exactly; rejects bad magic, version or digest mismatch, and
// truncated files with CheckpointError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lmbis
