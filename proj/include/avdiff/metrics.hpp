#pragma once

#include "avdiff/toy_data.hpp"
#include "avdiff/types.hpp"

namespace avdiff {

/// Mean and covariance of a feature distribution. Covariance is symmetric with
/// non-negative eigenvalues.
struct GaussianFit {
    Vec mean;
    Mat cov;
    long long count = 0;  // 0 for analytic moments
};

/// Sample mean and unbiased covariance of the rows of `samples` (N >= 2).
GaussianFit gaussian_fit(const Mat& samples);

/// Wraps analytic moments.
GaussianFit gaussian_fit(const GaussianMoments& moments);

/// Symmetric PSD square root via eigendecomposition. Negative eigenvalues are
/// clipped to 0; `clipped_mass` receives the clipped magnitude.
Mat sqrtm_psd(const Mat& sym, double* clipped_mass = nullptr);

/// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2).
/// `clip_warning` is set when clipped eigenvalue mass exceeds 1e-6 of the trace.
double frechet_distance(const GaussianFit& f1, const GaussianFit& f2, bool* clip_warning = nullptr);

/// KL(f1 || f2) between the fitted Gaussians. A covariance that is not positive
/// definite is regularized by +1e-6 I and `regularized` is set.
double gaussian_kl(const GaussianFit& f1, const GaussianFit& f2, bool* regularized = nullptr);

/// exp(mean_i KL(p_i || mean_j p_j)) over rows of class posteriors. Lies in [1, K].
double inception_score_analog(const Mat& posteriors);

struct AlignmentResult {
    double score = 0.0;
    int used = 0;
    int skipped = 0;  // pairs with a degenerate (zero) recovered factor
};

/// Mean cosine similarity between centred shared factors recovered from each
/// modality with the generator's mixing-matrix pseudoinverses.
AlignmentResult alignment_score(const Mat& audio, const Mat& video, const GeneratorSpec& spec);

}  // namespace avdiff
