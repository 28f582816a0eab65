#include "avdiff/tasks.hpp"

namespace avdiff {

TaskSpec make_task_spec(TaskId task, const ModalityLayout& layout) {
    TaskSpec spec;
    spec.task = task;
    switch (task) {
        case TaskId::T2AV:
            spec.noise_audio = true;
            spec.noise_video = true;
            break;
        case TaskId::A2V:
            spec.noise_audio = false;
            spec.noise_video = true;
            break;
        case TaskId::V2A:
            spec.noise_audio = true;
            spec.noise_video = false;
            break;
    }
    spec.loss_mask = element_mask(layout, spec.noise_audio, spec.noise_video);
    spec.layout = layout;
    return spec;
}

TaskId sample_task(Rng& rng) { return task_from_code(rng.uniform_int(0, kNumTasks - 1)); }

TrainingExample make_training_example(const TaskSpec& spec, const Vec& audio0, const Vec& video0, int class_id,
                                      int num_classes, const NoiseSchedule& s, Rng& rng) {
    if (class_id < 0 || class_id >= num_classes) {
        throw std::invalid_argument("training example: class id " + std::to_string(class_id) + " outside [0, " +
                                    std::to_string(num_classes) + ")");
    }
    const ModalityLayout& layout = spec.layout;
    TrainingExample ex;
    ex.t = rng.uniform_int(1, s.steps());
    ex.z_t = pack(audio0, video0, layout);
    ex.target_eps = UnifiedLatent{Mat::Zero(layout.packed_len(), layout.token_dim()), layout};
    for (Modality m : {Modality::Audio, Modality::Video}) {
        if (!spec.noised(m)) continue;
        const int off = layout.token_offset(m);
        const int n = layout.token_count(m);
        const int c = layout.channels(m);
        const Mat eps = rng.normal_matrix(n, c);
        ex.target_eps.data.block(off, 0, n, c) = eps;
        ex.z_t.data.block(off, 0, n, c) = q_sample(s, ex.z_t.data.block(off, 0, n, c), ex.t, eps);
    }
    ex.loss_mask = spec.loss_mask;
    ex.drop_text = rng.bernoulli(kConditionDropRate);
    ex.cond = ex.drop_text ? kNullClass : class_id;
    return ex;
}

double masked_modality_loss(const Eigen::Ref<const Mat>& eps, const Eigen::Ref<const Mat>& eps_hat,
                            const Eigen::Ref<const Mat>& mask, const ModalityLayout& layout, double weight,
                            Eigen::Ref<Mat>* grad) {
    if (eps.rows() != layout.packed_len() || eps.cols() != layout.token_dim()) {
        throw ShapeError("masked loss: target does not match layout");
    }
    if (eps_hat.rows() != eps.rows() || eps_hat.cols() != eps.cols() || mask.rows() != eps.rows() ||
        mask.cols() != eps.cols()) {
        throw ShapeError("masked loss: shape mismatch");
    }
    if (grad != nullptr) grad->setZero();
    double loss = 0.0;
    bool any = false;
    for (Modality m : {Modality::Audio, Modality::Video}) {
        const int off = layout.token_offset(m);
        const int n = layout.token_count(m);
        const auto msk = mask.middleRows(off, n).array();
        const double count = msk.sum();
        if (count == 0.0) continue;
        any = true;
        const auto resid = (eps_hat.middleRows(off, n) - eps.middleRows(off, n)).array() * msk;
        loss += weight * resid.square().sum() / count;
        if (grad != nullptr) {
            grad->middleRows(off, n) = (2.0 * weight / count) * resid.matrix();
        }
    }
    if (!any) {
        throw std::invalid_argument("masked loss: mask selects no elements");
    }
    return loss;
}

double loss_for_task(const TaskSpec& spec, const UnifiedLatent& eps_hat, const UnifiedLatent& eps, int t,
                     const NoiseSchedule& s) {
    require_same_shape(eps_hat.data, eps.data, "loss_for_task");
    return masked_modality_loss(eps.data, eps_hat.data, spec.loss_mask, eps.layout, s.loss_weight(t));
}

}  // namespace avdiff
