#include "avdiff/metrics.hpp"
#include "avdiff/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace avdiff;

namespace {

GaussianFit fit1d(double mean, double var) {
    return GaussianFit{Vec::Constant(1, mean), Mat::Constant(1, 1, var), 0};
}

Mat random_spd(int n, Rng& rng) {
    const Mat a = rng.normal_matrix(n, n);
    return a * a.transpose() + 0.1 * Mat::Identity(n, n);
}

// Denman-Beavers iteration for the principal square root of a general matrix.
Mat sqrtm_db(const Mat& a) {
    Mat y = a;
    Mat z = Mat::Identity(a.rows(), a.cols());
    for (int i = 0; i < 100; ++i) {
        const Mat yi = y.inverse();
        const Mat zi = z.inverse();
        y = 0.5 * (y + zi);
        z = 0.5 * (z + yi);
    }
    return y;
}

double frechet_db(const GaussianFit& f1, const GaussianFit& f2) {
    return (f1.mean - f2.mean).squaredNorm() + f1.cov.trace() + f2.cov.trace() -
           2.0 * sqrtm_db(f1.cov * f2.cov).trace();
}

// Pseudoinverse recovery written out with normal equations.
double alignment_brute(const Mat& audio, const Mat& video, const GeneratorSpec& g) {
    const Mat pa = (g.w_audio.transpose() * g.w_audio).inverse() * g.w_audio.transpose();
    const Mat pv = (g.w_video.transpose() * g.w_video).inverse() * g.w_video.transpose();
    Mat sa = (pa * audio.transpose()).transpose();
    Mat sv = (pv * video.transpose()).transpose();
    const RowVec ma = sa.colwise().mean();
    const RowVec mv = sv.colwise().mean();
    double total = 0.0;
    for (Eigen::Index i = 0; i < sa.rows(); ++i) {
        const RowVec a = sa.row(i) - ma;
        const RowVec v = sv.row(i) - mv;
        total += a.dot(v) / (a.norm() * v.norm());
    }
    return total / static_cast<double>(sa.rows());
}

const ModalityLayout kLayout({1, 4, 2, 1}, {1, 2, 2, 2});

}  // namespace

TEST_CASE("gaussian_fit") {
    Vec x(3);
    x << 1.0, -2.0, 0.5;
    Mat two(2, 3);
    two.row(0) = x.transpose();
    two.row(1) = -x.transpose();
    const GaussianFit f = gaussian_fit(two);
    CHECK(f.mean.isZero(0.0));
    CHECK((f.cov - 2.0 * x * x.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK(f.count == 2);

    CHECK(gaussian_fit(Mat::Constant(10, 4, 2.5)).cov.isZero(0.0));

    Rng rng(1);
    const int n = 100000;
    const GaussianFit big = gaussian_fit(rng.normal_matrix(n, 3));
    CHECK(big.mean.cwiseAbs().maxCoeff() < 4.0 / std::sqrt(n));
    CHECK((big.cov - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() < 4.0 * std::sqrt(2.0 / n));
    CHECK((big.cov - big.cov.transpose()).cwiseAbs().maxCoeff() < 1e-10);

    CHECK_THROWS_AS(gaussian_fit(Mat::Zero(1, 3)), std::invalid_argument);
}

TEST_CASE("sqrtm_psd") {
    Rng rng(2);
    const Mat a = random_spd(5, rng);
    const Mat r = sqrtm_psd(a);
    CHECK((r * r - a).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((r - sqrtm_db(a)).cwiseAbs().maxCoeff() < 1e-9);

    Mat indefinite = Mat::Zero(2, 2);
    indefinite(0, 0) = 4.0;
    indefinite(1, 1) = -1e-3;
    double clipped = 0.0;
    const Mat ri = sqrtm_psd(indefinite, &clipped);
    CHECK(std::abs(clipped - 1e-3) < 1e-15);
    CHECK(ri(0, 0) == doctest::Approx(2.0));
    CHECK(ri(1, 1) == 0.0);
}

TEST_CASE("frechet_distance") {
    CHECK(frechet_distance(fit1d(0, 1), fit1d(1, 1)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(frechet_distance(fit1d(0, 1), fit1d(0, 4)) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(frechet_distance(fit1d(2, 3), fit1d(2, 3)) < 1e-12);

    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const GaussianFit f1{rng.normal_matrix(4, 1), random_spd(4, rng), 0};
        const GaussianFit f2{rng.normal_matrix(4, 1), random_spd(4, rng), 0};
        const double fd = frechet_distance(f1, f2);
        CHECK(fd >= 0.0);
        CHECK(std::abs(fd - frechet_distance(f2, f1)) < 1e-8 * (1.0 + fd));
        CHECK(std::abs(fd - frechet_db(f1, f2)) < 1e-8 * (1.0 + fd));
        CHECK(frechet_distance(f1, f1) < 1e-9);
    }

    bool warn = true;
    frechet_distance(fit1d(0, 1), fit1d(0, 2), &warn);
    CHECK(!warn);
    GaussianFit bad{Vec::Zero(2), Mat::Identity(2, 2), 0};
    bad.cov(1, 1) = -1.0;
    frechet_distance(bad, GaussianFit{Vec::Zero(2), Mat::Identity(2, 2), 0}, &warn);
    CHECK(warn);
    CHECK_THROWS_AS(frechet_distance(fit1d(0, 1), GaussianFit{Vec::Zero(2), Mat::Identity(2, 2), 0}), ShapeError);
}

TEST_CASE("gaussian_kl") {
    CHECK(gaussian_kl(fit1d(0, 1), fit1d(1, 1)) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(gaussian_kl(fit1d(0, 1), fit1d(0, 1)) == 0.0);
    // KL(N(0,1) || N(0,4)) = 0.5 (1/4 - 1 + ln 4)
    CHECK(gaussian_kl(fit1d(0, 1), fit1d(0, 4)) == doctest::Approx(0.5 * (0.25 - 1.0 + std::log(4.0))));

    Rng rng(4);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + trial % 4;
        const GaussianFit f1{rng.normal_matrix(n, 1), random_spd(n, rng), 0};
        const GaussianFit f2{rng.normal_matrix(n, 1), random_spd(n, rng), 0};
        CHECK(gaussian_kl(f1, f2) >= 0.0);
    }

    bool reg = true;
    gaussian_kl(fit1d(0, 1), fit1d(0, 2), &reg);
    CHECK(!reg);
    const GaussianFit singular{Vec::Zero(2), Mat::Zero(2, 2), 0};
    const double kl = gaussian_kl(GaussianFit{Vec::Zero(2), Mat::Identity(2, 2), 0}, singular, &reg);
    CHECK(reg);
    CHECK(std::isfinite(kl));
    CHECK_THROWS_AS(gaussian_kl(fit1d(0, 1), GaussianFit{Vec::Zero(2), Mat::Identity(2, 2), 0}), ShapeError);
}

TEST_CASE("inception_score_analog") {
    Mat same(10, 3);
    for (int i = 0; i < 10; ++i) same.row(i) << 0.2, 0.3, 0.5;
    CHECK(inception_score_analog(same) == doctest::Approx(1.0).epsilon(1e-14));

    Mat onehot = Mat::Zero(6, 3);
    for (int i = 0; i < 6; ++i) onehot(i, i % 3) = 1.0;
    CHECK(inception_score_analog(onehot) == doctest::Approx(3.0).epsilon(1e-12));

    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        const int k = 2 + trial % 4;
        Mat p = rng.normal_matrix(20, k).array().exp().matrix();
        for (int i = 0; i < 20; ++i) p.row(i) /= p.row(i).sum();
        const double is = inception_score_analog(p);
        CHECK(is >= 1.0 - 1e-12);
        CHECK(is <= k + 1e-12);
    }
    CHECK_THROWS_AS(inception_score_analog(Mat::Zero(0, 3)), std::invalid_argument);
    Mat bad = same;
    bad(0, 0) = 0.9;
    CHECK_THROWS_AS(inception_score_analog(bad), std::invalid_argument);
}

TEST_CASE("alignment_score") {
    SUBCASE("noise-free coupling gives one") {
        GeneratorSpec g = make_generator(2, kLayout, 3, 4.0, 0.5, 0.5, 6);
        g.sigma_audio = 1e-12;
        g.sigma_video = 1e-12;
        Rng rng(7);
        const PairSamples ps = sample_pairs(g, 1000, rng);
        const AlignmentResult r = alignment_score(ps.audio, ps.video, g);
        CHECK(r.score > 1.0 - 1e-9);
        CHECK(r.used == 1000);
        CHECK(r.skipped == 0);
    }
    SUBCASE("shuffled pairs give zero") {
        const GeneratorSpec g = make_generator(2, kLayout, 3, 4.0, 0.5, 0.5, 8);
        Rng rng(9);
        const int n = 40000;
        PairSamples ps = sample_pairs(g, n, rng);
        std::vector<int> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng.engine());
        Mat video(n, ps.video.cols());
        for (int i = 0; i < n; ++i) video.row(i) = ps.video.row(perm[i]);
        CHECK(std::abs(alignment_score(ps.audio, video, g).score) < 4.0 / std::sqrt(n));
    }
    SUBCASE("matches the brute-force computation") {
        const GeneratorSpec g = make_generator(2, kLayout, 3, 4.0, 0.5, 0.5, 10);
        Rng rng(11);
        const PairSamples ps = sample_pairs(g, 5000, rng);
        CHECK(std::abs(alignment_score(ps.audio, ps.video, g).score - alignment_brute(ps.audio, ps.video, g)) < 1e-10);
    }
    SUBCASE("orthogonal transform of the shared factor") {
        // Rotating both mixing matrices' factor space leaves the score unchanged.
        const GeneratorSpec g = make_generator(2, kLayout, 3, 4.0, 0.5, 0.5, 12);
        Rng rng(13);
        const PairSamples ps = sample_pairs(g, 2000, rng);
        const double theta = 0.7;
        Mat q(2, 2);
        q << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
        GeneratorSpec rotated = g;
        rotated.w_audio = g.w_audio * q;
        rotated.w_video = g.w_video * q;
        CHECK(std::abs(alignment_score(ps.audio, ps.video, g).score -
                       alignment_score(ps.audio, ps.video, rotated).score) < 1e-10);
    }
    SUBCASE("coupled data at sigma 0.5") {
        const GeneratorSpec g = make_generator(2, kLayout, 3, 4.0, 0.5, 0.5, 1);
        Rng rng(15);
        const int n = 100000;
        const PairSamples ps = sample_pairs(g, n, rng);
        const double score = alignment_score(ps.audio, ps.video, g).score;
        MESSAGE("alignment of coupled data " << score);
        CHECK(std::abs(score - 0.8983) < 0.004);
        CHECK(std::abs(score - alignment_brute(ps.audio, ps.video, g)) < 1e-10);
    }
    SUBCASE("degenerate rows are skipped") {
        const GeneratorSpec g = make_generator(2, kLayout, 3, 4.0, 0.5, 0.5, 1);
        Mat audio = Mat::Zero(3, 8);
        Mat video = Mat::Zero(3, 8);
        audio.row(0) = g.w_audio.col(0).transpose();
        video.row(0) = g.w_video.col(0).transpose();
        audio.row(1) = -g.w_audio.col(0).transpose();
        video.row(1) = -g.w_video.col(0).transpose();
        const AlignmentResult r = alignment_score(audio, video, g);
        CHECK(r.skipped == 1);
        CHECK(r.used == 2);
        CHECK(r.score == doctest::Approx(1.0));
    }
    const GeneratorSpec g = make_generator(2, kLayout, 3, 4.0, 0.5, 0.5, 1);
    CHECK_THROWS_AS(alignment_score(Mat::Zero(2, 7), Mat::Zero(2, 8), g), ShapeError);
    CHECK_THROWS_AS(alignment_score(Mat::Zero(2, 8), Mat::Zero(3, 8), g), std::invalid_argument);
}
