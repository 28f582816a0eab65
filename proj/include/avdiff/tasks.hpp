#pragma once

#include "avdiff/diffusion_math.hpp"
#include "avdiff/rng.hpp"
#include "avdiff/unified_latent.hpp"

#include <array>

namespace avdiff {

/// Which modalities a task diffuses and which it holds clean.
///
///   T2AV: both noised, loss L_a + L_v
///   A2V:  video noised, audio clean, loss over video tokens
///   V2A:  audio noised, video clean, loss over audio tokens
struct TaskSpec {
    TaskId task = TaskId::T2AV;
    bool noise_audio = true;
    bool noise_video = true;
    Mat loss_mask;  // packed_len x token_dim element mask
    ModalityLayout layout;

    bool noised(Modality m) const { return m == Modality::Audio ? noise_audio : noise_video; }
    bool clean(Modality m) const { return !noised(m); }
};

TaskSpec make_task_spec(TaskId task, const ModalityLayout& layout);

/// Uniform over the three tasks.
TaskId sample_task(Rng& rng);

/// Probability with which the class condition is replaced by the null row.
inline constexpr double kConditionDropRate = 0.5;

struct TrainingExample {
    UnifiedLatent z_t;
    int t = 1;
    UnifiedLatent target_eps;  // zero on clean-modality positions
    Mat loss_mask;
    int cond = kNullClass;     // class id, or kNullClass when dropped
    bool drop_text = false;
};

/// Builds one noised example: draws t ~ U[1, T], noises the task's target
/// modalities with fresh eps and keeps clean modalities at their data value.
TrainingExample make_training_example(const TaskSpec& spec, const Vec& audio0, const Vec& video0, int class_id,
                                      int num_classes, const NoiseSchedule& s, Rng& rng);

/// Sum over modalities of gamma_t * (mean squared residual over that modality's
/// masked elements). Modalities with no masked elements contribute nothing.
/// With a single-modality mask this equals weighted_noise_loss.
/// When `grad` is non-null it receives d loss / d eps_hat.
double masked_modality_loss(const Eigen::Ref<const Mat>& eps, const Eigen::Ref<const Mat>& eps_hat,
                            const Eigen::Ref<const Mat>& mask, const ModalityLayout& layout, double weight,
                            Eigen::Ref<Mat>* grad = nullptr);

double loss_for_task(const TaskSpec& spec, const UnifiedLatent& eps_hat, const UnifiedLatent& eps, int t,
                     const NoiseSchedule& s);

}  // namespace avdiff
