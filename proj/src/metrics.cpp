#include "avdiff/metrics.hpp"

#include <cmath>

namespace avdiff {

namespace {

constexpr double kRegularizer = 1e-6;

Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

void check_fit(const GaussianFit& f) {
    if (f.cov.rows() != f.mean.size() || f.cov.cols() != f.mean.size()) {
        throw ShapeError("gaussian fit: covariance does not match mean dimension");
    }
}

// Log-determinant via Cholesky, regularizing once if needed.
Eigen::LLT<Mat> factor(const Mat& cov, bool* regularized) {
    Eigen::LLT<Mat> llt(cov);
    if (llt.info() == Eigen::Success && (llt.matrixLLT().diagonal().array() > 0.0).all()) return llt;
    if (regularized != nullptr) *regularized = true;
    Mat reg = cov;
    reg.diagonal().array() += kRegularizer;
    llt.compute(reg);
    if (llt.info() != Eigen::Success) throw NumericalError("gaussian_kl: covariance is not positive semidefinite");
    return llt;
}

}  // namespace

GaussianFit gaussian_fit(const Mat& samples) {
    if (samples.rows() < 2) throw std::invalid_argument("gaussian_fit: need at least 2 samples");
    GaussianFit fit;
    fit.count = samples.rows();
    fit.mean = samples.colwise().mean().transpose();
    const Mat centred = samples.rowwise() - fit.mean.transpose();
    fit.cov = symmetrize(centred.transpose() * centred / static_cast<double>(samples.rows() - 1));
    return fit;
}

GaussianFit gaussian_fit(const GaussianMoments& moments) {
    return GaussianFit{moments.mean, symmetrize(moments.cov), 0};
}

Mat sqrtm_psd(const Mat& sym, double* clipped_mass) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(symmetrize(sym));
    if (eig.info() != Eigen::Success) throw NumericalError("sqrtm: eigendecomposition failed");
    const Vec vals = eig.eigenvalues();
    if (clipped_mass != nullptr) *clipped_mass = (-vals.array()).max(0.0).sum();
    const Vec roots = vals.array().max(0.0).sqrt().matrix();
    return eig.eigenvectors() * roots.asDiagonal() * eig.eigenvectors().transpose();
}

double frechet_distance(const GaussianFit& f1, const GaussianFit& f2, bool* clip_warning) {
    check_fit(f1);
    check_fit(f2);
    if (f1.mean.size() != f2.mean.size()) throw ShapeError("frechet_distance: dimension mismatch");
    double clipped1 = 0.0;
    double clipped2 = 0.0;
    const Mat root1 = sqrtm_psd(f1.cov, &clipped1);
    const Mat cross = sqrtm_psd(root1 * f2.cov * root1, &clipped2);
    const double trace_sum = f1.cov.trace() + f2.cov.trace();
    if (clip_warning != nullptr) {
        *clip_warning = (clipped1 + clipped2) > 1e-6 * std::max(trace_sum, 1e-300);
    }
    const double fd = (f1.mean - f2.mean).squaredNorm() + trace_sum - 2.0 * cross.trace();
    // Rounding can leave a tiny negative value for identical inputs.
    return std::max(fd, 0.0);
}

double gaussian_kl(const GaussianFit& f1, const GaussianFit& f2, bool* regularized) {
    check_fit(f1);
    check_fit(f2);
    if (f1.mean.size() != f2.mean.size()) throw ShapeError("gaussian_kl: dimension mismatch");
    if (regularized != nullptr) *regularized = false;
    const auto k = static_cast<double>(f1.mean.size());
    const Eigen::LLT<Mat> llt2 = factor(f2.cov, regularized);
    const Eigen::LLT<Mat> llt1 = factor(f1.cov, regularized);
    const double logdet2 = 2.0 * llt2.matrixLLT().diagonal().array().log().sum();
    const double logdet1 = 2.0 * llt1.matrixLLT().diagonal().array().log().sum();
    const Vec diff = f2.mean - f1.mean;
    const double trace_term = llt2.solve(f1.cov).trace();
    const double mahal = diff.dot(llt2.solve(diff));
    return std::max(0.0, 0.5 * (trace_term + mahal - k + logdet2 - logdet1));
}

double inception_score_analog(const Mat& posteriors) {
    if (posteriors.rows() == 0 || posteriors.cols() == 0) {
        throw std::invalid_argument("inception_score_analog: empty input");
    }
    for (Eigen::Index i = 0; i < posteriors.rows(); ++i) {
        if (std::abs(posteriors.row(i).sum() - 1.0) > 1e-6 || (posteriors.row(i).array() < 0.0).any()) {
            throw std::invalid_argument("inception_score_analog: each row must be a probability vector");
        }
    }
    const RowVec marginal = posteriors.colwise().mean();
    double total = 0.0;
    for (Eigen::Index i = 0; i < posteriors.rows(); ++i) {
        for (Eigen::Index k = 0; k < posteriors.cols(); ++k) {
            const double p = posteriors(i, k);
            if (p > 0.0) total += p * std::log(p / marginal[k]);
        }
    }
    return std::exp(total / static_cast<double>(posteriors.rows()));
}

AlignmentResult alignment_score(const Mat& audio, const Mat& video, const GeneratorSpec& spec) {
    if (audio.rows() == 0 || audio.rows() != video.rows()) {
        throw std::invalid_argument("alignment_score: need a nonempty, equal number of audio and video rows");
    }
    if (audio.cols() != spec.audio_dim() || video.cols() != spec.video_dim()) {
        throw ShapeError("alignment_score: latent sizes do not match the generator");
    }
    const Mat pinv_a = spec.w_audio.completeOrthogonalDecomposition().pseudoInverse();
    const Mat pinv_v = spec.w_video.completeOrthogonalDecomposition().pseudoInverse();
    Mat sa = audio * pinv_a.transpose();
    Mat sv = video * pinv_v.transpose();
    sa = sa.rowwise() - sa.colwise().mean();
    sv = sv.rowwise() - sv.colwise().mean();
    AlignmentResult result;
    double total = 0.0;
    for (Eigen::Index i = 0; i < sa.rows(); ++i) {
        const double na = sa.row(i).norm();
        const double nv = sv.row(i).norm();
        if (na < 1e-12 || nv < 1e-12) {
            ++result.skipped;
            continue;
        }
        total += sa.row(i).dot(sv.row(i)) / (na * nv);
        ++result.used;
    }
    if (result.used == 0) throw std::invalid_argument("alignment_score: every pair is degenerate");
    result.score = total / result.used;
    return result;
}

}  // namespace avdiff
