#include "avdiff/train.hpp"

#include "avdiff/digest.hpp"
#include "avdiff/tasks.hpp"

#include <algorithm>
#include <cmath>

namespace avdiff {

namespace {

std::uint64_t structure_signature(const DenoiserParameters& p) {
    std::string names;
    p.for_each([&](const std::string& name, const auto& t) {
        names += name + ":" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + ";";
    });
    return fnv1a64(names);
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("train: learning rate must be positive");
    }
    if (total_steps < 0) throw std::invalid_argument("train: total_steps must be >= 0");
    if (warmup_steps < 0) throw std::invalid_argument("train: warmup_steps must be >= 0");
    if (total_steps > 0 && warmup_steps > total_steps) {
        throw std::invalid_argument("train: warmup_steps must not exceed total_steps");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw std::invalid_argument("train: Adam betas must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw std::invalid_argument("train: Adam epsilon must be positive");
    if (!(clip_norm >= 0.0)) throw std::invalid_argument("train: clip_norm must be >= 0");
    if (log_every < 1) throw std::invalid_argument("train: log_every must be >= 1");
    if (checkpoint_every < 0) throw std::invalid_argument("train: checkpoint_every must be >= 0");
}

AdamState init_adam(const DenoiserParameters& params) {
    return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

double learning_rate_at(const TrainConfig& cfg, long long step) {
    if (step < 1) throw std::out_of_range("learning_rate_at: step is 1-based");
    if (cfg.warmup_steps == 0) return cfg.learning_rate;
    return cfg.learning_rate * std::min(1.0, static_cast<double>(step) / cfg.warmup_steps);
}

double gradient_norm(const DenoiserParameters& grads) {
    double sq = 0.0;
    grads.for_each([&](const std::string&, const auto& g) { sq += g.squaredNorm(); });
    return std::sqrt(sq);
}

double optimizer_step(DenoiserParameters& params, const DenoiserParameters& grads, AdamState& state,
                      const TrainConfig& hyper) {
    if (!grads.all_finite()) throw NumericalError("optimizer_step: non-finite gradient");
    const long long step = state.step + 1;
    const double lr = learning_rate_at(hyper, step);
    double scale = 1.0;
    if (hyper.clip_norm > 0.0) {
        const double norm = gradient_norm(grads);
        if (norm > hyper.clip_norm) scale = hyper.clip_norm / norm;
    }
    const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
    const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));

    using Flat = Eigen::Map<Eigen::ArrayXd>;
    std::vector<Flat> p_list;
    std::vector<Eigen::Map<const Eigen::ArrayXd>> g_list;
    std::vector<Flat> m_list;
    std::vector<Flat> v_list;
    const auto collect = [](std::vector<Flat>& out) {
        return [&out](const std::string&, auto& t) { out.emplace_back(t.data(), t.size()); };
    };
    params.for_each(collect(p_list));
    grads.for_each([&](const std::string&, const auto& t) { g_list.emplace_back(t.data(), t.size()); });
    state.m.for_each(collect(m_list));
    state.v.for_each(collect(v_list));
    if (g_list.size() != p_list.size() || m_list.size() != p_list.size() || v_list.size() != p_list.size()) {
        throw ShapeError("optimizer_step: gradient/state structure does not match parameters");
    }
    for (std::size_t i = 0; i < p_list.size(); ++i) {
        if (g_list[i].size() != p_list[i].size() || m_list[i].size() != p_list[i].size() ||
            v_list[i].size() != p_list[i].size()) {
            throw ShapeError("optimizer_step: tensor size mismatch");
        }
        const Eigen::ArrayXd g = scale * g_list[i];
        m_list[i] = hyper.beta1 * m_list[i] + (1.0 - hyper.beta1) * g;
        v_list[i] = hyper.beta2 * v_list[i] + (1.0 - hyper.beta2) * g.square();
        p_list[i] -= lr * (m_list[i] / c1) / ((v_list[i] / c2).sqrt() + hyper.epsilon);
    }
    state.step = step;
    if (!params.all_finite()) throw NumericalError("optimizer_step: parameters became non-finite");
    return lr;
}

void GeneratorSource::draw(Rng& rng, Vec& audio, Vec& video, int& class_id) const {
    class_id = rng.uniform_int(0, spec_.num_classes - 1);
    auto [a, v] = sample_pair(spec_, class_id, rng);
    audio = std::move(a);
    video = std::move(v);
}

DatasetSource::DatasetSource(ModalityLayout layout, int num_classes, Mat audio, Mat video, std::vector<int> classes)
    : layout_(std::move(layout)),
      num_classes_(num_classes),
      audio_(std::move(audio)),
      video_(std::move(video)),
      classes_(std::move(classes)) {
    if (audio_.rows() == 0) throw std::invalid_argument("dataset: no records");
    if (audio_.rows() != video_.rows() || static_cast<std::size_t>(audio_.rows()) != classes_.size()) {
        throw ShapeError("dataset: audio, video and class counts differ");
    }
    if (audio_.cols() != layout_.audio_flat_dim() || video_.cols() != layout_.video_flat_dim()) {
        throw ShapeError("dataset: latent sizes do not match the layout");
    }
    for (int c : classes_) {
        if (c < 0 || c >= num_classes_) throw std::out_of_range("dataset: class id outside [0, K)");
    }
}

void DatasetSource::draw(Rng& rng, Vec& audio, Vec& video, int& class_id) const {
    const auto i = static_cast<Eigen::Index>(rng.uniform_int(0, static_cast<int>(audio_.rows()) - 1));
    audio = audio_.row(i).transpose();
    video = video_.row(i).transpose();
    class_id = classes_[static_cast<std::size_t>(i)];
}

TrainState init_train_state(const DenoiserConfig& model, const TrainConfig& cfg) {
    TrainState state;
    state.params = init_params(model, cfg.seed);
    state.optimizer = init_adam(state.params);
    return state;
}

TrainingBatch make_batch(TaskId task, int batch_size, const DataSource& data, const NoiseSchedule& s, Rng& rng) {
    const ModalityLayout& layout = data.layout();
    const TaskSpec spec = make_task_spec(task, layout);
    const int plen = layout.packed_len();
    const int td = layout.token_dim();
    TrainingBatch out;
    out.inputs.tokens.resize(static_cast<Eigen::Index>(batch_size) * plen, td);
    out.targets.eps.resize(out.inputs.tokens.rows(), td);
    out.targets.mask.resize(out.inputs.tokens.rows(), td);
    Vec audio;
    Vec video;
    int class_id = 0;
    for (int b = 0; b < batch_size; ++b) {
        data.draw(rng, audio, video, class_id);
        TrainingExample ex = make_training_example(spec, audio, video, class_id, data.num_classes(), s, rng);
        const auto off = static_cast<Eigen::Index>(b) * plen;
        out.inputs.tokens.middleRows(off, plen) = ex.z_t.data;
        out.targets.eps.middleRows(off, plen) = ex.target_eps.data;
        out.targets.mask.middleRows(off, plen) = ex.loss_mask;
        out.inputs.steps.push_back(ex.t);
        out.inputs.tasks.push_back(task);
        out.inputs.classes.push_back(ex.cond);
    }
    return out;
}

TrainResult train(const TrainConfig& cfg, const DenoiserConfig& model, const NoiseSchedule& s, const DataSource& data,
                  TrainState state, const TrainHooks& hooks) {
    cfg.validate();
    model.validate();
    if (!(data.layout() == model.layout)) {
        throw ConfigMismatchError("train: data layout " + data.layout().to_string() + " does not match model layout " +
                                  model.layout.to_string());
    }
    if (data.num_classes() != model.num_classes) {
        throw ConfigMismatchError("train: data and model disagree on the number of classes");
    }
    if (state.step > cfg.total_steps) throw std::invalid_argument("train: state is already past total_steps");

    const Rng root(cfg.seed);
    TrainResult result;
    // Per-step streams make a resumed run identical to an uninterrupted one.
    const Rng loop_root = root.split("train");
    const std::uint64_t structure = structure_signature(state.params);

    try {
        Rng baseline_rng = root.split("baseline");
        for (int k = 0; k < kNumTasks; ++k) {
            const TaskId task = task_from_code(k);
            const TrainingBatch batch = make_batch(task, cfg.batch_size, data, s, baseline_rng);
            result.baseline[static_cast<std::size_t>(k)] =
                batch_loss(state.params, model, batch.inputs, batch.targets, s);
        }

        while (state.step < cfg.total_steps) {
            Rng rng = loop_root.split(static_cast<std::uint64_t>(state.step + 1));
            const TaskId task = sample_task(rng);
            const TrainingBatch batch = make_batch(task, cfg.batch_size, data, s, rng);
            LossAndGradients lg = gradients(state.params, model, batch.inputs, batch.targets, s);
            if (!std::isfinite(lg.loss)) throw NumericalError("train: non-finite loss");
            const DenoiserParameters before = state.params;
            const AdamState before_opt = state.optimizer;
            double lr = 0.0;
            try {
                lr = optimizer_step(state.params, lg.grads, state.optimizer, cfg);
            } catch (const NumericalError&) {
                state.params = before;
                state.optimizer = before_opt;
                throw;
            }
            ++state.step;

            const TrainLogRow row{state.step, task, lg.loss, lr};
            result.history.push_back(row);
            if (state.step % cfg.log_every == 0 || state.step == cfg.total_steps) result.log.push_back(row);
            if (hooks.checkpoint && cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 &&
                state.step != cfg.total_steps) {
                hooks.checkpoint(state);
            }
        }
    } catch (const NumericalError&) {
        if (hooks.dump_on_failure) hooks.dump_on_failure(state);
        throw;
    }

    // Single shared parameter set: structure never changes during training.
    if (structure_signature(state.params) != structure) throw std::logic_error("train: parameter structure changed");

    if (hooks.checkpoint) hooks.checkpoint(state);
    result.state = std::move(state);
    return result;
}

}  // namespace avdiff
