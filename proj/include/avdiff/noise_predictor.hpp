#pragma once

#include "avdiff/unified_latent.hpp"

#include <vector>

namespace avdiff {

/// A batch of packed latents with per-example conditioning.
/// Rows are example-major: example b owns rows [b * packed_len, (b + 1) * packed_len).
struct DenoiserBatch {
    Mat tokens;                 // (B * packed_len) x token_dim
    std::vector<int> steps;     // diffusion step per example, in [1, T]
    std::vector<TaskId> tasks;  // task per example
    std::vector<int> classes;   // class id, or kNullClass for the unconditional row

    int size() const { return static_cast<int>(steps.size()); }
};

/// Anything that maps a noised packed batch to predicted noise of the same shape.
class NoisePredictor {
public:
    virtual ~NoisePredictor() = default;
    virtual const ModalityLayout& layout() const = 0;
    virtual int num_classes() const = 0;
    virtual Mat predict_noise(const DenoiserBatch& batch) const = 0;
};

}  // namespace avdiff
