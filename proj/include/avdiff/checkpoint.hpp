#pragma once

#include "avdiff/formats.hpp"
#include "avdiff/train.hpp"

#include <filesystem>
#include <string>

namespace avdiff {

/// Everything needed to resume training or to sample: resolved run config,
/// parameters, optimizer state and the step counter.
struct Checkpoint {
    RunConfig config;
    TrainState state;
    /// Digest of the generator the training data came from (0 if unknown).
    std::uint64_t generator_digest = 0;
};

inline constexpr int kCheckpointVersion = 1;

/// Layout: "UDCK <version>\n", "<header bytes>\n", key/value header text
/// (config, step, digests, tensor table), then little-endian f64 payload
/// (parameters, first moments, second moments), then an 8-byte FNV-1a digest
/// of everything before it.
std::string encode_checkpoint(const Checkpoint& ckpt);

/// Throws FormatError on truncation, digest or version mismatch.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws ConfigMismatchError when the checkpoint was trained on another layout.
void require_layout(const Checkpoint& ckpt, const ModalityLayout& layout);

}  // namespace avdiff
