#include "avdiff/diffusion_math.hpp"

#include <cmath>
#include <string>

namespace avdiff {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) {
        throw std::invalid_argument("noise schedule: step count must be >= 1, got " + std::to_string(steps));
    }
    if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0)) {
        throw std::invalid_argument("noise schedule: beta endpoints must lie in (0, 1)");
    }
    if (beta_start > beta_end) {
        throw std::invalid_argument("noise schedule: beta_start must not exceed beta_end");
    }
    std::vector<double> betas(static_cast<std::size_t>(steps));
    for (int i = 0; i < steps; ++i) {
        betas[i] = steps == 1 ? beta_start
                              : beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
    }
    return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
    if (betas.empty()) {
        throw std::invalid_argument("noise schedule: empty beta table");
    }
    NoiseSchedule s;
    const std::size_t n = betas.size();
    s.alphas_.resize(n);
    s.alpha_bars_.resize(n);
    s.posterior_vars_.resize(n);
    s.loss_weights_.assign(n, 1.0);
    double running = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double b = betas[i];
        if (!(b > 0.0 && b < 1.0)) {
            throw std::invalid_argument("noise schedule: beta out of (0, 1) at step " + std::to_string(i + 1));
        }
        s.alphas_[i] = 1.0 - b;
        const double prev = running;
        running *= s.alphas_[i];
        s.alpha_bars_[i] = running;
        // Step 1 is the deterministic final step.
        s.posterior_vars_[i] = i == 0 ? 0.0 : (1.0 - prev) / (1.0 - running) * b;
    }
    s.betas_ = std::move(betas);
    return s;
}

NoiseSchedule NoiseSchedule::with_loss_weights(std::vector<double> weights) const {
    if (weights.size() != betas_.size()) {
        throw ShapeError("loss weight table length must equal the step count");
    }
    for (double w : weights) {
        if (!(w > 0.0) || !std::isfinite(w)) {
            throw std::invalid_argument("loss weights must be finite and positive");
        }
    }
    NoiseSchedule copy = *this;
    copy.loss_weights_ = std::move(weights);
    return copy;
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) {
        return 1.0;
    }
    return alpha_bars_[index(t)];
}

void NoiseSchedule::check_step(int t) const {
    if (t < 1 || t > steps()) {
        throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) +
                                "]");
    }
}

Mat q_sample(const NoiseSchedule& s, const Mat& z0, int t, const Mat& eps) {
    require_same_shape(z0, eps, "q_sample");
    s.check_step(t);
    const double ab = s.alpha_bar(t);
    return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

Mat q_step(const NoiseSchedule& s, const Mat& z_prev, int t, const Mat& eps) {
    require_same_shape(z_prev, eps, "q_step");
    const double b = s.beta(t);
    return std::sqrt(1.0 - b) * z_prev + std::sqrt(b) * eps;
}

Mat posterior_mean(const NoiseSchedule& s, const Mat& z_t, int t, const Mat& eps_hat) {
    require_same_shape(z_t, eps_hat, "posterior_mean");
    const double a = s.alpha(t);
    const double coef = (1.0 - a) / std::sqrt(1.0 - s.alpha_bar(t));
    return (z_t - coef * eps_hat) / std::sqrt(a);
}

Mat posterior_step(const NoiseSchedule& s, const Mat& z_t, int t, const Mat& eps_hat, const Mat& noise) {
    require_same_shape(z_t, noise, "posterior_step");
    Mat mean = posterior_mean(s, z_t, t, eps_hat);
    if (t == 1) {
        return mean;
    }
    return mean + std::sqrt(s.posterior_var(t)) * noise;
}

double weighted_noise_loss(const Mat& eps, const Mat& eps_hat, int t, const NoiseSchedule& s, const Mat& mask) {
    require_same_shape(eps, eps_hat, "weighted_noise_loss");
    require_same_shape(eps, mask, "weighted_noise_loss mask");
    double total = 0.0;
    double count = 0.0;
    for (Eigen::Index i = 0; i < eps.size(); ++i) {
        const double m = mask.data()[i];
        if (m != 0.0 && m != 1.0) {
            throw std::invalid_argument("weighted_noise_loss: mask entries must be 0 or 1");
        }
        if (m == 1.0) {
            const double r = eps.data()[i] - eps_hat.data()[i];
            total += r * r;
            count += 1.0;
        }
    }
    if (count == 0.0) {
        throw std::invalid_argument("weighted_noise_loss: mask selects no elements");
    }
    return s.loss_weight(t) * total / count;
}

}  // namespace avdiff
