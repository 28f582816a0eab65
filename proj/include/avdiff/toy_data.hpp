#pragma once

#include "avdiff/diffusion_math.hpp"
#include "avdiff/noise_predictor.hpp"
#include "avdiff/rng.hpp"
#include "avdiff/unified_latent.hpp"

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

namespace avdiff {

/// Coupled linear-Gaussian two-modality source:
///   k ~ U{0..K-1},  s ~ N(mu_k, I_d),
///   audio = W_a s + sigma_a xi_a,  video = W_v s + sigma_v xi_v.
/// Classes share covariance, so every conditional and class posterior is closed-form.
struct GeneratorSpec {
    int d = 1;
    int num_classes = 1;
    Mat class_means;  // K x d
    Mat w_audio;      // audio_flat_dim x d
    Mat w_video;      // video_flat_dim x d
    double sigma_audio = 0.5;
    double sigma_video = 0.5;
    ModalityLayout layout;

    void validate() const;
    double min_separation() const;
    std::uint64_t digest() const;
    int audio_dim() const { return static_cast<int>(w_audio.rows()); }
    int video_dim() const { return static_cast<int>(w_video.rows()); }
};

/// Class means on a regular simplex with pairwise distance `separation`, mixing
/// matrices with iid Gaussian unit-norm columns, then rescaled so each
/// modality's marginal variance averages 1 (requires sigma < 1).
GeneratorSpec make_generator(int d, const ModalityLayout& layout, int num_classes, double separation,
                             double sigma_audio, double sigma_video, std::uint64_t seed);

std::pair<Vec, Vec> sample_pair(const GeneratorSpec& spec, int class_id, Rng& rng);

struct PairSamples {
    Mat audio;  // n x audio_dim
    Mat video;  // n x video_dim
    std::vector<int> classes;
};

/// n pairs with classes drawn uniformly.
PairSamples sample_pairs(const GeneratorSpec& spec, int n, Rng& rng);

struct GaussianMoments {
    Vec mean;
    Mat cov;
};

/// Exact conditional moments of one modality given the other. With a class the
/// result is Gaussian; without one it is the moment-matched class mixture,
/// weighted by the class posterior of the given value.
GaussianMoments conditional_oracle(const GeneratorSpec& spec, Modality given, const Vec& value,
                                   std::optional<int> class_id);

/// Class posterior under the uniform prior. At least one modality must be given.
Vec bayes_posterior(const GeneratorSpec& spec, const Vec* audio, const Vec* video);

/// Marginal (class-mixture) moments of a modality.
GaussianMoments marginal_moments(const GeneratorSpec& spec, Modality m);

/// Cached factorizations for repeated oracle queries.
class ToyOracle {
public:
    explicit ToyOracle(GeneratorSpec spec);

    const GeneratorSpec& spec() const { return spec_; }
    /// Shared within-class covariance of the joint [audio; video] vector.
    const Mat& joint_cov() const { return joint_cov_; }
    Vec joint_class_mean(int k) const;

    GaussianMoments conditional(Modality given, const Vec& value, std::optional<int> class_id) const;
    Vec posterior(const Vec* audio, const Vec* video) const;
    /// Argmax of the joint posterior for each row pair.
    std::vector<int> classify(const Mat& audio, const Mat& video) const;

    /// Conditional within-class covariance of the other modality, and its regression.
    const Mat& conditional_cov(Modality given) const;
    Vec conditional_class_mean(Modality given, const Vec& value, int k) const;

private:
    Vec log_likelihoods(const Vec* audio, const Vec* video) const;

    GeneratorSpec spec_;
    Mat joint_cov_;
    Eigen::LLT<Mat> llt_audio_, llt_video_, llt_joint_;
    Mat gain_[2];   // [given] regression matrix of the other modality on the given one
    Mat ccov_[2];   // [given] conditional covariance of the other modality
};

/// Exact epsilon-prediction for the noised toy distribution:
/// eps_hat = -sqrt(1 - abar_t) * grad log p_t(z_t), per task. For A2V / V2A the
/// target is the conditional law of the noised modality given the clean one;
/// clean positions receive 0. A class selects one mixture component; the null
/// class uses the full mixture.
class AnalyticNoisePredictor : public NoisePredictor {
public:
    AnalyticNoisePredictor(const GeneratorSpec& spec, const NoiseSchedule& schedule);

    const ModalityLayout& layout() const override { return oracle_.spec().layout; }
    int num_classes() const override { return oracle_.spec().num_classes; }
    Mat predict_noise(const DenoiserBatch& batch) const override;

private:
    // Shared-covariance Gaussian mixture, cov = U diag(lambda) U^T.
    struct Mixture {
        Mat means;  // K x dim
        Mat basis;
        Vec eigenvalues;
    };
    Vec mixture_eps(const Mixture& mix, const Vec& weights, const Vec& z, double alpha_bar) const;

    ToyOracle oracle_;
    NoiseSchedule schedule_;
    Mixture joint_;
    Mixture cond_[2];  // [given modality] mixture of the other modality, means filled per query
};

}  // namespace avdiff
