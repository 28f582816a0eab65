#include "avdiff/sampler.hpp"

#include "avdiff/rng.hpp"
#include "avdiff/tasks.hpp"

#include <algorithm>
#include <cmath>

namespace avdiff {

namespace {

// Model evaluations run in chunks to bound memory; results do not depend on the chunk size.
constexpr int kChunk = 256;

Mat predict_chunked(const NoisePredictor& model, const Mat& tokens, int count, int t, TaskId task,
                    const std::vector<int>& classes) {
    const int plen = model.layout().packed_len();
    Mat out(tokens.rows(), tokens.cols());
    for (int start = 0; start < count; start += kChunk) {
        const int n = std::min(kChunk, count - start);
        DenoiserBatch batch;
        batch.tokens = tokens.middleRows(static_cast<Eigen::Index>(start) * plen, static_cast<Eigen::Index>(n) * plen);
        batch.steps.assign(n, t);
        batch.tasks.assign(n, task);
        batch.classes.assign(classes.begin() + start, classes.begin() + start + n);
        out.middleRows(static_cast<Eigen::Index>(start) * plen, static_cast<Eigen::Index>(n) * plen) =
            model.predict_noise(batch);
    }
    return out;
}

}  // namespace

SamplerMode parse_sampler_mode(std::string_view name) {
    if (name == "strided" || name == "strided_deterministic") return SamplerMode::StridedDeterministic;
    if (name == "ancestral" || name == "ancestral_full") return SamplerMode::AncestralFull;
    throw std::invalid_argument("unknown sampler mode '" + std::string(name) + "'");
}

std::string_view sampler_mode_name(SamplerMode mode) {
    return mode == SamplerMode::AncestralFull ? "ancestral_full" : "strided_deterministic";
}

void SamplerConfig::validate(int max_step) const {
    if (steps < 1 || steps > max_step) {
        throw std::invalid_argument("sampler: steps must lie in [1, " + std::to_string(max_step) + "]");
    }
    if (!(guidance >= 0.0) || !std::isfinite(guidance)) {
        throw std::invalid_argument("sampler: guidance scale must be finite and >= 0");
    }
    if (mode == SamplerMode::AncestralFull && steps != max_step) {
        throw std::invalid_argument("sampler: ancestral_full mode runs every step (steps must equal T)");
    }
}

Mat cfg_combine(const Mat& eps_uncond, const Mat& eps_cond, double w) {
    require_same_shape(eps_uncond, eps_cond, "cfg_combine");
    return eps_uncond + w * (eps_cond - eps_uncond);
}

std::vector<int> stride_timesteps(int max_step, int steps) {
    if (steps < 1 || steps > max_step) {
        throw std::invalid_argument("stride_timesteps: steps must lie in [1, T]");
    }
    if (steps == 1) return {max_step};
    std::vector<int> out(static_cast<std::size_t>(steps));
    const long long span = max_step - 1;
    const long long den = steps - 1;
    for (int i = 0; i < steps; ++i) {
        // 1 + round(span * (steps - 1 - i) / den), rounding half up.
        const long long k = steps - 1 - i;
        out[i] = static_cast<int>(1 + (2 * span * k + den) / (2 * den));
    }
    return out;
}

Mat strided_step(const NoiseSchedule& s, const Mat& z_t, int t, int t_prev, const Mat& eps_hat) {
    require_same_shape(z_t, eps_hat, "strided_step");
    s.check_step(t);
    if (t_prev < 0 || t_prev >= t) {
        throw std::invalid_argument("strided_step: requires t > t_prev >= 0");
    }
    const double ab = s.alpha_bar(t);
    const double ab_prev = s.alpha_bar(t_prev);
    const Mat z0 = (z_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);
    return std::sqrt(ab_prev) * z0 + std::sqrt(1.0 - ab_prev) * eps_hat;
}

GenerateResult generate(const NoisePredictor& model, const NoiseSchedule& s, const GenerateRequest& request,
                        const SamplerConfig& cfg) {
    cfg.validate(s.steps());
    const ModalityLayout& layout = model.layout();
    const int n = request.count;
    if (n < 1) throw std::invalid_argument("generate: count must be >= 1");

    std::vector<int> classes = request.classes;
    if (classes.empty()) classes.assign(n, kNullClass);
    if (static_cast<int>(classes.size()) != n) throw ShapeError("generate: one class id per sample required");
    bool conditional = false;
    for (int c : classes) {
        if (c == kNullClass) continue;
        if (c < 0 || c >= model.num_classes()) throw std::out_of_range("generate: class id outside [0, K)");
        conditional = true;
    }

    const TaskSpec spec = make_task_spec(request.task, layout);
    std::optional<Modality> clean_modality;
    if (request.task == TaskId::A2V) clean_modality = Modality::Audio;
    if (request.task == TaskId::V2A) clean_modality = Modality::Video;

    const int plen = layout.packed_len();
    const int td = layout.token_dim();
    Mat clean_packed = Mat::Zero(static_cast<Eigen::Index>(n) * plen, td);
    if (clean_modality) {
        const int dim = layout.flat_dim(*clean_modality);
        if (request.clean.rows() == 0) {
            throw std::invalid_argument(std::string("generate: ") + std::string(task_name(request.task)) +
                                        " requires a clean conditioning latent");
        }
        if (request.clean.cols() != dim || (request.clean.rows() != 1 && request.clean.rows() != n)) {
            throw ShapeError("generate: conditioning latent does not match layout/count");
        }
        const Vec zero_a = Vec::Zero(layout.audio_flat_dim());
        const Vec zero_v = Vec::Zero(layout.video_flat_dim());
        for (int i = 0; i < n; ++i) {
            const Vec row = request.clean.row(request.clean.rows() == 1 ? 0 : i).transpose();
            Eigen::Ref<Mat> dst = clean_packed.middleRows(static_cast<Eigen::Index>(i) * plen, plen);
            if (*clean_modality == Modality::Audio) {
                pack_into(row, zero_v, layout, dst);
            } else {
                pack_into(zero_a, row, layout, dst);
            }
        }
    }

    // 1 on noised-modality channels, 0 on clean and padded entries.
    const Mat noised_mask = spec.loss_mask.replicate(n, 1);
    const auto keep_clean = [&](Mat& z) {
        z = (noised_mask.array() * z.array() + (1.0 - noised_mask.array()) * clean_packed.array()).matrix();
    };

    Rng rng = Rng(cfg.seed).split("sampler");
    Mat z = rng.normal_matrix(clean_packed.rows(), td);
    keep_clean(z);

    std::vector<int> schedule;
    if (cfg.mode == SamplerMode::AncestralFull) {
        schedule.resize(static_cast<std::size_t>(s.steps()));
        for (int i = 0; i < s.steps(); ++i) schedule[i] = s.steps() - i;
    } else {
        schedule = stride_timesteps(s.steps(), cfg.steps);
    }

    const bool guided = conditional && cfg.guidance != 1.0;
    const std::vector<int> null_classes(static_cast<std::size_t>(n), kNullClass);
    GenerateResult result;
    for (std::size_t i = 0; i < schedule.size(); ++i) {
        const int t = schedule[i];
        Mat eps;
        if (guided) {
            const Mat eps_cond = predict_chunked(model, z, n, t, request.task, classes);
            const Mat eps_uncond = predict_chunked(model, z, n, t, request.task, null_classes);
            eps = cfg_combine(eps_uncond, eps_cond, cfg.guidance);
            result.denoiser_calls += 2;
        } else {
            eps = predict_chunked(model, z, n, t, request.task, classes);
            result.denoiser_calls += 1;
        }
        if (cfg.mode == SamplerMode::AncestralFull) {
            const Mat noise = t > 1 ? rng.normal_matrix(z.rows(), z.cols()) : Mat::Zero(z.rows(), z.cols());
            z = posterior_step(s, z, t, eps, noise);
        } else {
            const int t_prev = i + 1 < schedule.size() ? schedule[i + 1] : 0;
            z = strided_step(s, z, t, t_prev, eps);
        }
        keep_clean(z);
        if (!z.allFinite()) {
            throw NumericalError("generate: non-finite sampler state at step " + std::to_string(t));
        }
    }

    result.audio.resize(n, layout.audio_flat_dim());
    result.video.resize(n, layout.video_flat_dim());
    for (int i = 0; i < n; ++i) {
        const auto block = z.middleRows(static_cast<Eigen::Index>(i) * plen, plen);
        result.audio.row(i) = unpack_modality(block, layout, Modality::Audio).transpose();
        result.video.row(i) = unpack_modality(block, layout, Modality::Video).transpose();
    }
    // Clean modality passes through bit-exactly.
    if (clean_modality) {
        Mat& dst = *clean_modality == Modality::Audio ? result.audio : result.video;
        for (int i = 0; i < n; ++i) dst.row(i) = request.clean.row(request.clean.rows() == 1 ? 0 : i);
    }
    return result;
}

std::pair<Vec, Vec> generate_one(const NoisePredictor& model, const NoiseSchedule& s, TaskId task,
                                 std::optional<int> class_id, const Vec* clean, const SamplerConfig& cfg) {
    GenerateRequest request;
    request.task = task;
    request.count = 1;
    request.classes = {class_id ? *class_id : kNullClass};
    if (clean != nullptr) request.clean = clean->transpose();
    GenerateResult r = generate(model, s, request, cfg);
    return {r.audio.row(0).transpose(), r.video.row(0).transpose()};
}

}  // namespace avdiff
