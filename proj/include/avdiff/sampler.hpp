#pragma once

#include "avdiff/diffusion_math.hpp"
#include "avdiff/noise_predictor.hpp"

#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

namespace avdiff {

enum class SamplerMode { AncestralFull, StridedDeterministic };

SamplerMode parse_sampler_mode(std::string_view name);
std::string_view sampler_mode_name(SamplerMode mode);

struct SamplerConfig {
    int steps = 30;
    double guidance = 5.0;
    SamplerMode mode = SamplerMode::StridedDeterministic;
    std::uint64_t seed = 0;

    void validate(int max_step) const;
};

/// eps_uncond + w (eps_cond - eps_uncond).
Mat cfg_combine(const Mat& eps_uncond, const Mat& eps_cond, double w);

/// `steps` indices uniformly spaced over [1, T], descending, starting at T and
/// ending at 1 (a single step returns {T}).
std::vector<int> stride_timesteps(int max_step, int steps);

/// Deterministic jump from t to t_prev (t_prev = 0 yields the clean estimate).
Mat strided_step(const NoiseSchedule& s, const Mat& z_t, int t, int t_prev, const Mat& eps_hat);

struct GenerateRequest {
    TaskId task = TaskId::T2AV;
    int count = 1;
    /// Per-sample class ids (kNullClass allowed). Empty means unconditional.
    std::vector<int> classes;
    /// Clean conditioning modality for A2V (audio) or V2A (video): either
    /// `count` rows or a single row shared by every sample.
    Mat clean;
};

struct GenerateResult {
    Mat audio;  // count x audio_flat_dim
    Mat video;  // count x video_flat_dim
    int denoiser_calls = 0;
};

/// Reverse diffusion of the task's noised modalities with classifier-free
/// guidance; clean modalities are re-imposed after every step and returned
/// unchanged. Deterministic given cfg.seed.
GenerateResult generate(const NoisePredictor& model, const NoiseSchedule& s, const GenerateRequest& request,
                        const SamplerConfig& cfg);

/// Single-sample convenience form.
std::pair<Vec, Vec> generate_one(const NoisePredictor& model, const NoiseSchedule& s, TaskId task,
                                 std::optional<int> class_id, const Vec* clean, const SamplerConfig& cfg);

}  // namespace avdiff
