#pragma once

#include "avdiff/denoiser.hpp"
#include "avdiff/diffusion_math.hpp"
#include "avdiff/rng.hpp"
#include "avdiff/toy_data.hpp"

#include <array>
#include <functional>
#include <vector>

namespace avdiff {

struct TrainConfig {
    int batch_size = 32;
    double learning_rate = 1e-4;
    int warmup_steps = 1000;
    int total_steps = 20000;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Global gradient-norm clip; 0 disables.
    double clip_norm = 0.0;
    int log_every = 100;
    /// Periodic checkpoint interval; 0 means final checkpoint only.
    int checkpoint_every = 0;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Bias-corrected adaptive-moment state; same structure as the parameters.
struct AdamState {
    DenoiserParameters m;
    DenoiserParameters v;
    long long step = 0;
};

AdamState init_adam(const DenoiserParameters& params);

/// base * min(1, step / warmup) for 1-based step.
double learning_rate_at(const TrainConfig& cfg, long long step);

/// One adaptive-moment update; advances state.step and returns the rate used.
/// Throws NumericalError on non-finite gradients.
double optimizer_step(DenoiserParameters& params, const DenoiserParameters& grads, AdamState& state,
                      const TrainConfig& hyper);

/// Global L2 norm over every gradient tensor.
double gradient_norm(const DenoiserParameters& grads);

/// Source of clean (audio, video, class) training triples.
class DataSource {
public:
    virtual ~DataSource() = default;
    virtual const ModalityLayout& layout() const = 0;
    virtual int num_classes() const = 0;
    virtual void draw(Rng& rng, Vec& audio, Vec& video, int& class_id) const = 0;
};

/// Fresh pairs from the analytic generator.
class GeneratorSource : public DataSource {
public:
    explicit GeneratorSource(GeneratorSpec spec) : spec_(std::move(spec)) {}
    const ModalityLayout& layout() const override { return spec_.layout; }
    int num_classes() const override { return spec_.num_classes; }
    void draw(Rng& rng, Vec& audio, Vec& video, int& class_id) const override;

private:
    GeneratorSpec spec_;
};

/// Uniform draws with replacement from a fixed dataset.
class DatasetSource : public DataSource {
public:
    DatasetSource(ModalityLayout layout, int num_classes, Mat audio, Mat video, std::vector<int> classes);
    const ModalityLayout& layout() const override { return layout_; }
    int num_classes() const override { return num_classes_; }
    void draw(Rng& rng, Vec& audio, Vec& video, int& class_id) const override;

private:
    ModalityLayout layout_;
    int num_classes_;
    Mat audio_, video_;
    std::vector<int> classes_;
};

struct TrainState {
    DenoiserParameters params;
    AdamState optimizer;
    long long step = 0;
};

TrainState init_train_state(const DenoiserConfig& model, const TrainConfig& cfg);

struct TrainLogRow {
    long long step = 0;
    TaskId task = TaskId::T2AV;
    double loss = 0.0;
    double learning_rate = 0.0;
};

struct TrainResult {
    TrainState state;
    std::vector<TrainLogRow> log;      // every log_every steps and the final step
    std::vector<TrainLogRow> history;  // every step
    std::array<double, kNumTasks> baseline{};  // per-task loss of the initial parameters
};

struct TrainHooks {
    /// Called every checkpoint_every steps and after the final step.
    std::function<void(const TrainState&)> checkpoint;
    /// Called with the last good state before a NumericalError propagates.
    std::function<void(const TrainState&)> dump_on_failure;
};

/// Assembles one batch for `task` (all examples share the task).
struct TrainingBatch {
    DenoiserBatch inputs;
    LossTargets targets;
};
TrainingBatch make_batch(TaskId task, int batch_size, const DataSource& data, const NoiseSchedule& s, Rng& rng);

/// Multi-task loop: each iteration samples a task, builds a batch, takes a
/// gradient step. Deterministic given cfg.seed (single worker).
TrainResult train(const TrainConfig& cfg, const DenoiserConfig& model, const NoiseSchedule& s, const DataSource& data,
                  TrainState state, const TrainHooks& hooks = {});

}  // namespace avdiff
