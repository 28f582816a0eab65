#pragma once

#include "avdiff/types.hpp"

#include <vector>

namespace avdiff {

/// Discrete-time DDPM noise schedule. Steps are 1-based: t in [1, T].
/// All tables are 64-bit regardless of model precision. Immutable once built.
class NoiseSchedule {
public:
    /// Linear betas from beta_start to beta_end inclusive.
    static NoiseSchedule linear(int steps, double beta_start, double beta_end);

    /// Schedule from an explicit beta table (each in (0,1)).
    static NoiseSchedule from_betas(std::vector<double> betas);

    /// Copy with a custom per-step loss weight table (length T, all > 0).
    NoiseSchedule with_loss_weights(std::vector<double> weights) const;

    int steps() const { return static_cast<int>(betas_.size()); }

    double beta(int t) const { return betas_[index(t)]; }
    double alpha(int t) const { return alphas_[index(t)]; }
    /// Cumulative product; alpha_bar(0) == 1 by convention.
    double alpha_bar(int t) const;
    /// Reverse-process variance; posterior_var(1) == 0.
    double posterior_var(int t) const { return posterior_vars_[index(t)]; }
    double loss_weight(int t) const { return loss_weights_[index(t)]; }

    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alphas() const { return alphas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }
    const std::vector<double>& posterior_vars() const { return posterior_vars_; }
    const std::vector<double>& loss_weights() const { return loss_weights_; }

    void check_step(int t) const;

private:
    NoiseSchedule() = default;
    std::size_t index(int t) const {
        check_step(t);
        return static_cast<std::size_t>(t - 1);
    }

    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
    std::vector<double> posterior_vars_;
    std::vector<double> loss_weights_;
};

/// Resolved linear-schedule settings, as stored in configs and checkpoints.
struct ScheduleConfig {
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;

    NoiseSchedule build() const { return NoiseSchedule::linear(steps, beta_start, beta_end); }
    friend bool operator==(const ScheduleConfig&, const ScheduleConfig&) = default;
};

/// Closed-form forward marginal: sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
Mat q_sample(const NoiseSchedule& s, const Mat& z0, int t, const Mat& eps);

/// One Markov forward step: sqrt(1 - beta_t) z_prev + sqrt(beta_t) eps.
Mat q_step(const NoiseSchedule& s, const Mat& z_prev, int t, const Mat& eps);

/// Reverse mean (1/sqrt(alpha_t)) (z_t - (1 - alpha_t)/sqrt(1 - abar_t) eps_hat).
Mat posterior_mean(const NoiseSchedule& s, const Mat& z_t, int t, const Mat& eps_hat);

/// Ancestral step: posterior_mean + sqrt(posterior_var) noise for t >= 2,
/// posterior_mean exactly for t == 1.
Mat posterior_step(const NoiseSchedule& s, const Mat& z_t, int t, const Mat& eps_hat, const Mat& noise);

/// gamma_t * mean over mask-selected entries of (eps - eps_hat)^2.
/// The mean divides by the number of selected entries; mask entries must be 0 or 1.
double weighted_noise_loss(const Mat& eps, const Mat& eps_hat, int t, const NoiseSchedule& s, const Mat& mask);

}  // namespace avdiff
