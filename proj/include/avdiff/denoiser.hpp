#pragma once

#include "avdiff/diffusion_math.hpp"
#include "avdiff/noise_predictor.hpp"
#include "avdiff/unified_latent.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace avdiff {

struct DenoiserConfig {
    int model_dim = 32;
    int num_blocks = 2;
    int num_heads = 4;
    int cond_dim = 32;
    int num_classes = 3;
    int ffn_mult = 4;
    /// When false the temporal and spatial self-attention sublayers are removed
    /// (every position is then processed independently).
    bool attention = true;
    std::string precision = "f64";
    ModalityLayout layout;

    void validate() const;
    int seq_len() const { return layout.packed_len() + 1; }

    friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

struct NormParams {
    RowVec gain;
    RowVec bias;
};

struct AttentionParams {
    Mat wq, wk, wv, wo;
    RowVec bo;
};

struct BlockParams {
    NormParams norm_temporal;
    AttentionParams temporal;
    NormParams norm_spatial;
    AttentionParams spatial;
    NormParams norm_cross;
    AttentionParams cross;
    NormParams norm_ffn;
    Mat ffn_w1;
    RowVec ffn_b1;
    Mat ffn_w2;
    RowVec ffn_b2;
};

/// Every learnable tensor of the denoiser. One instance serves all three tasks.
struct DenoiserParameters {
    PatchEmbed patch;
    Mat task_table;   // 3 x model_dim
    Mat class_table;  // (K + 1) x cond_dim, last row is the null condition
    Mat time_w1;
    RowVec time_b1;
    Mat time_w2;
    RowVec time_b2;
    std::vector<BlockParams> blocks;
    Unpatch out;
    Mat skip_weight;  // model_dim x token_dim, time features to a per-channel gain on z_t
    RowVec skip_bias;

    /// Visits (name, tensor) in fixed declaration order. Empty tensors (the
    /// self-attention weights of an attention-free config) are skipped.
    template <typename F>
    void for_each(F&& f);
    template <typename F>
    void for_each(F&& f) const;

    std::size_t parameter_count() const;
    /// Same structure with every entry zero.
    DenoiserParameters zeros_like() const;
    bool all_finite() const;
};

/// FNV-1a over names, shapes and raw values of every tensor in order.
std::uint64_t parameter_digest(const DenoiserParameters& p);

/// Deterministic given seed. Linear weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in));
/// norm gains 1; the output map and the skip gain are zero so the initial
/// prediction is 0.
DenoiserParameters init_params(const DenoiserConfig& cfg, std::uint64_t seed);

/// Predicted noise for a batch, (B * packed_len) x token_dim.
Mat forward_batch(const DenoiserParameters& p, const DenoiserConfig& cfg, const DenoiserBatch& batch,
                  int max_step);

/// Single-example forward. `class_id` empty or `drop_text` set both select the null row.
UnifiedLatent forward(const DenoiserParameters& p, const DenoiserConfig& cfg, const UnifiedLatent& z_t, int t,
                      int max_step, TaskId task, std::optional<int> class_id, bool drop_text);

/// Regression targets and element masks, same row layout as DenoiserBatch::tokens.
struct LossTargets {
    Mat eps;
    Mat mask;
};

struct LossAndGradients {
    double loss = 0.0;
    DenoiserParameters grads;
};

/// Mean over the batch of the per-example masked modality loss
/// (see masked_modality_loss) and its exact gradient.
LossAndGradients gradients(const DenoiserParameters& p, const DenoiserConfig& cfg, const DenoiserBatch& batch,
                           const LossTargets& targets, const NoiseSchedule& s);

/// Loss only; no caches are kept.
double batch_loss(const DenoiserParameters& p, const DenoiserConfig& cfg, const DenoiserBatch& batch,
                  const LossTargets& targets, const NoiseSchedule& s);

/// NoisePredictor adapter over a parameter set. Holds references; the
/// parameters must outlive it and must not be mutated while it is in use.
class DenoiserModel : public NoisePredictor {
public:
    DenoiserModel(const DenoiserParameters& params, const DenoiserConfig& cfg, int max_step)
        : params_(params), cfg_(cfg), max_step_(max_step) {}

    const ModalityLayout& layout() const override { return cfg_.layout; }
    int num_classes() const override { return cfg_.num_classes; }
    Mat predict_noise(const DenoiserBatch& batch) const override;

    const DenoiserParameters& params() const { return params_; }

private:
    const DenoiserParameters& params_;
    const DenoiserConfig& cfg_;
    int max_step_;
};

// ---------------------------------------------------------------------------

namespace detail {
template <typename P, typename F>
void visit_params(P& p, F&& f) {
    auto norm = [&](const std::string& prefix, auto& n) {
        f(prefix + ".gain", n.gain);
        f(prefix + ".bias", n.bias);
    };
    auto attn = [&](const std::string& prefix, auto& a) {
        if (a.wq.size() == 0) return;
        f(prefix + ".wq", a.wq);
        f(prefix + ".wk", a.wk);
        f(prefix + ".wv", a.wv);
        f(prefix + ".wo", a.wo);
        f(prefix + ".bo", a.bo);
    };
    f(std::string("patch.weight"), p.patch.weight);
    f(std::string("patch.bias"), p.patch.bias);
    f(std::string("patch.positions"), p.patch.positions);
    f(std::string("task_table"), p.task_table);
    f(std::string("class_table"), p.class_table);
    f(std::string("time.w1"), p.time_w1);
    f(std::string("time.b1"), p.time_b1);
    f(std::string("time.w2"), p.time_w2);
    f(std::string("time.b2"), p.time_b2);
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        auto& b = p.blocks[i];
        const std::string pre = "block" + std::to_string(i);
        if (b.temporal.wq.size() != 0) norm(pre + ".norm_temporal", b.norm_temporal);
        attn(pre + ".temporal", b.temporal);
        if (b.spatial.wq.size() != 0) norm(pre + ".norm_spatial", b.norm_spatial);
        attn(pre + ".spatial", b.spatial);
        norm(pre + ".norm_cross", b.norm_cross);
        attn(pre + ".cross", b.cross);
        norm(pre + ".norm_ffn", b.norm_ffn);
        f(pre + ".ffn.w1", b.ffn_w1);
        f(pre + ".ffn.b1", b.ffn_b1);
        f(pre + ".ffn.w2", b.ffn_w2);
        f(pre + ".ffn.b2", b.ffn_b2);
    }
    f(std::string("out.weight"), p.out.weight);
    f(std::string("out.bias"), p.out.bias);
    f(std::string("skip.weight"), p.skip_weight);
    f(std::string("skip.bias"), p.skip_bias);
}
}  // namespace detail

template <typename F>
void DenoiserParameters::for_each(F&& f) {
    detail::visit_params(*this, f);
}

template <typename F>
void DenoiserParameters::for_each(F&& f) const {
    detail::visit_params(*this, f);
}

}  // namespace avdiff
