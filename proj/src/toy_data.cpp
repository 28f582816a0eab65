#include "avdiff/toy_data.hpp"

#include "avdiff/digest.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace avdiff {

namespace {

int idx(Modality m) { return m == Modality::Audio ? 0 : 1; }

Vec softmax(const Vec& logits) {
    const double mx = logits.maxCoeff();
    Vec w = (logits.array() - mx).exp();
    return w / w.sum();
}

// Population covariance of the class means under the uniform prior.
Mat class_mean_cov(const GeneratorSpec& spec) {
    const RowVec centre = spec.class_means.colwise().mean();
    const Mat centred = spec.class_means.rowwise() - centre;
    return centred.transpose() * centred / static_cast<double>(spec.num_classes);
}

void append_matrix(std::string& text, const char* name, const Mat& m) {
    char buf[64];
    text += name;
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        std::snprintf(buf, sizeof buf, " %a", m.data()[i]);
        text += buf;
    }
    text += '\n';
}

}  // namespace

void GeneratorSpec::validate() const {
    if (d < 1) throw std::invalid_argument("generator: d must be >= 1");
    if (num_classes < 1) throw std::invalid_argument("generator: K must be >= 1");
    if (class_means.rows() != num_classes || class_means.cols() != d) {
        throw ShapeError("generator: class means must be K x d");
    }
    if (w_audio.rows() != layout.audio_flat_dim() || w_audio.cols() != d) {
        throw ShapeError("generator: audio mixing matrix must be audio_flat_dim x d");
    }
    if (w_video.rows() != layout.video_flat_dim() || w_video.cols() != d) {
        throw ShapeError("generator: video mixing matrix must be video_flat_dim x d");
    }
    if (!(sigma_audio > 0.0) || !(sigma_video > 0.0)) {
        throw std::invalid_argument("generator: noise scales must be positive");
    }
    for (const Mat* w : {&w_audio, &w_video}) {
        Eigen::FullPivLU<Mat> lu(*w);
        if (lu.rank() < d) throw std::invalid_argument("generator: mixing matrix lacks full column rank");
    }
}

double GeneratorSpec::min_separation() const {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < num_classes; ++i) {
        for (int j = i + 1; j < num_classes; ++j) {
            best = std::min(best, (class_means.row(i) - class_means.row(j)).norm());
        }
    }
    return best;
}

std::uint64_t GeneratorSpec::digest() const {
    std::string text = "generator d=" + std::to_string(d) + " K=" + std::to_string(num_classes) + " " +
                       layout.to_string() + "\n";
    char buf[96];
    std::snprintf(buf, sizeof buf, "sigma %a %a\n", sigma_audio, sigma_video);
    text += buf;
    append_matrix(text, "means", class_means);
    append_matrix(text, "w_audio", w_audio);
    append_matrix(text, "w_video", w_video);
    return fnv1a64(text);
}

GeneratorSpec make_generator(int d, const ModalityLayout& layout, int num_classes, double separation,
                             double sigma_audio, double sigma_video, std::uint64_t seed) {
    if (d < 1 || num_classes < 1) throw std::invalid_argument("generator: d and K must be >= 1");
    if (!(separation > 0.0)) throw std::invalid_argument("generator: separation must be positive");
    if (num_classes - 1 > d) {
        throw std::invalid_argument("generator: cannot place " + std::to_string(num_classes) +
                                    " equidistant means in " + std::to_string(d) + " dimensions");
    }
    if (!(sigma_audio > 0.0 && sigma_audio < 1.0) || !(sigma_video > 0.0 && sigma_video < 1.0)) {
        throw std::invalid_argument("generator: noise scales must lie in (0, 1) for unit-variance standardization");
    }
    if (layout.audio_flat_dim() < d || layout.video_flat_dim() < d) {
        throw std::invalid_argument("generator: modality dimension smaller than the shared factor dimension");
    }

    GeneratorSpec spec;
    spec.d = d;
    spec.num_classes = num_classes;
    spec.sigma_audio = sigma_audio;
    spec.sigma_video = sigma_video;
    spec.layout = layout;

    // Regular simplex via the Helmert basis: vertex i, coordinate j is h_j[i].
    spec.class_means = Mat::Zero(num_classes, d);
    const double scale = separation / std::sqrt(2.0);
    for (int j = 1; j < num_classes; ++j) {
        const double norm = std::sqrt(static_cast<double>(j) * (j + 1));
        for (int i = 0; i < j; ++i) spec.class_means(i, j - 1) = scale / norm;
        spec.class_means(j, j - 1) = -scale * j / norm;
    }

    Rng rng = Rng(seed).split("generator");
    const Mat spread = Mat::Identity(d, d) + class_mean_cov(spec);
    auto draw = [&](int rows, double sigma) {
        Mat w;
        do {
            w = rng.normal_matrix(rows, d);
            const RowVec norms = w.colwise().norm();
            w = w * norms.cwiseInverse().asDiagonal();
        } while (Eigen::FullPivLU<Mat>(w).rank() < d);
        const double signal = (w * spread * w.transpose()).trace() / rows;
        return Mat(w * std::sqrt((1.0 - sigma * sigma) / signal));
    };
    spec.w_audio = draw(layout.audio_flat_dim(), sigma_audio);
    spec.w_video = draw(layout.video_flat_dim(), sigma_video);
    spec.validate();
    return spec;
}

std::pair<Vec, Vec> sample_pair(const GeneratorSpec& spec, int class_id, Rng& rng) {
    if (class_id < 0 || class_id >= spec.num_classes) {
        throw std::out_of_range("sample_pair: class id outside [0, K)");
    }
    Vec s = spec.class_means.row(class_id).transpose();
    for (int i = 0; i < spec.d; ++i) s[i] += rng.normal();
    Vec audio = spec.w_audio * s;
    for (Eigen::Index i = 0; i < audio.size(); ++i) audio[i] += spec.sigma_audio * rng.normal();
    Vec video = spec.w_video * s;
    for (Eigen::Index i = 0; i < video.size(); ++i) video[i] += spec.sigma_video * rng.normal();
    return {std::move(audio), std::move(video)};
}

PairSamples sample_pairs(const GeneratorSpec& spec, int n, Rng& rng) {
    PairSamples out;
    out.audio.resize(n, spec.audio_dim());
    out.video.resize(n, spec.video_dim());
    out.classes.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int k = rng.uniform_int(0, spec.num_classes - 1);
        auto [a, v] = sample_pair(spec, k, rng);
        out.audio.row(i) = a.transpose();
        out.video.row(i) = v.transpose();
        out.classes[i] = k;
    }
    return out;
}

ToyOracle::ToyOracle(GeneratorSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const int na = spec_.audio_dim();
    const int nv = spec_.video_dim();
    joint_cov_.resize(na + nv, na + nv);
    joint_cov_.topLeftCorner(na, na) = spec_.w_audio * spec_.w_audio.transpose();
    joint_cov_.topLeftCorner(na, na).diagonal().array() += spec_.sigma_audio * spec_.sigma_audio;
    joint_cov_.bottomRightCorner(nv, nv) = spec_.w_video * spec_.w_video.transpose();
    joint_cov_.bottomRightCorner(nv, nv).diagonal().array() += spec_.sigma_video * spec_.sigma_video;
    joint_cov_.topRightCorner(na, nv) = spec_.w_audio * spec_.w_video.transpose();
    joint_cov_.bottomLeftCorner(nv, na) = joint_cov_.topRightCorner(na, nv).transpose();

    const Mat caa = joint_cov_.topLeftCorner(na, na);
    const Mat cvv = joint_cov_.bottomRightCorner(nv, nv);
    const Mat cav = joint_cov_.topRightCorner(na, nv);
    llt_audio_.compute(caa);
    llt_video_.compute(cvv);
    llt_joint_.compute(joint_cov_);
    if (llt_audio_.info() != Eigen::Success || llt_video_.info() != Eigen::Success ||
        llt_joint_.info() != Eigen::Success) {
        throw NumericalError("toy oracle: singular conditioning block");
    }
    // Given audio: video | audio has gain C_va C_aa^-1.
    gain_[0] = llt_audio_.solve(cav).transpose();
    ccov_[0] = cvv - gain_[0] * cav;
    gain_[1] = llt_video_.solve(cav.transpose()).transpose();
    ccov_[1] = caa - gain_[1] * cav.transpose();
    for (Mat& c : ccov_) c = 0.5 * (c + c.transpose());
}

Vec ToyOracle::joint_class_mean(int k) const {
    Vec m(spec_.audio_dim() + spec_.video_dim());
    const Vec mu = spec_.class_means.row(k).transpose();
    m.head(spec_.audio_dim()) = spec_.w_audio * mu;
    m.tail(spec_.video_dim()) = spec_.w_video * mu;
    return m;
}

const Mat& ToyOracle::conditional_cov(Modality given) const { return ccov_[idx(given)]; }

Vec ToyOracle::conditional_class_mean(Modality given, const Vec& value, int k) const {
    const Vec mu = spec_.class_means.row(k).transpose();
    if (given == Modality::Audio) {
        return spec_.w_video * mu + gain_[0] * (value - spec_.w_audio * mu);
    }
    return spec_.w_audio * mu + gain_[1] * (value - spec_.w_video * mu);
}

Vec ToyOracle::log_likelihoods(const Vec* audio, const Vec* video) const {
    if (audio == nullptr && video == nullptr) {
        throw std::invalid_argument("bayes posterior: at least one modality must be given");
    }
    if (audio != nullptr && audio->size() != spec_.audio_dim()) throw ShapeError("posterior: audio size");
    if (video != nullptr && video->size() != spec_.video_dim()) throw ShapeError("posterior: video size");
    Vec ll(spec_.num_classes);
    for (int k = 0; k < spec_.num_classes; ++k) {
        const Vec mu = spec_.class_means.row(k).transpose();
        if (audio != nullptr && video != nullptr) {
            Vec x(spec_.audio_dim() + spec_.video_dim());
            x << *audio, *video;
            const Vec r = x - joint_class_mean(k);
            ll[k] = -0.5 * r.dot(llt_joint_.solve(r));
        } else if (audio != nullptr) {
            const Vec r = *audio - spec_.w_audio * mu;
            ll[k] = -0.5 * r.dot(llt_audio_.solve(r));
        } else {
            const Vec r = *video - spec_.w_video * mu;
            ll[k] = -0.5 * r.dot(llt_video_.solve(r));
        }
    }
    return ll;
}

Vec ToyOracle::posterior(const Vec* audio, const Vec* video) const { return softmax(log_likelihoods(audio, video)); }

std::vector<int> ToyOracle::classify(const Mat& audio, const Mat& video) const {
    std::vector<int> labels(static_cast<std::size_t>(audio.rows()));
    for (Eigen::Index i = 0; i < audio.rows(); ++i) {
        const Vec a = audio.row(i).transpose();
        const Vec v = video.row(i).transpose();
        Eigen::Index best = 0;
        log_likelihoods(&a, &v).maxCoeff(&best);
        labels[i] = static_cast<int>(best);
    }
    return labels;
}

GaussianMoments ToyOracle::conditional(Modality given, const Vec& value, std::optional<int> class_id) const {
    const int expected = given == Modality::Audio ? spec_.audio_dim() : spec_.video_dim();
    if (value.size() != expected) throw ShapeError("conditional oracle: value does not match layout");
    if (class_id) {
        if (*class_id < 0 || *class_id >= spec_.num_classes) {
            throw std::out_of_range("conditional oracle: class id outside [0, K)");
        }
        return {conditional_class_mean(given, value, *class_id), ccov_[idx(given)]};
    }
    const Vec w = given == Modality::Audio ? posterior(&value, nullptr) : posterior(nullptr, &value);
    const int other = given == Modality::Audio ? spec_.video_dim() : spec_.audio_dim();
    Vec mean = Vec::Zero(other);
    Mat second = ccov_[idx(given)];
    for (int k = 0; k < spec_.num_classes; ++k) {
        const Vec m = conditional_class_mean(given, value, k);
        mean += w[k] * m;
        second += w[k] * m * m.transpose();
    }
    return {mean, second - mean * mean.transpose()};
}

GaussianMoments conditional_oracle(const GeneratorSpec& spec, Modality given, const Vec& value,
                                   std::optional<int> class_id) {
    return ToyOracle(spec).conditional(given, value, class_id);
}

Vec bayes_posterior(const GeneratorSpec& spec, const Vec* audio, const Vec* video) {
    return ToyOracle(spec).posterior(audio, video);
}

GaussianMoments marginal_moments(const GeneratorSpec& spec, Modality m) {
    const Mat& w = m == Modality::Audio ? spec.w_audio : spec.w_video;
    const double sigma = m == Modality::Audio ? spec.sigma_audio : spec.sigma_video;
    const Vec centre = spec.class_means.colwise().mean().transpose();
    Mat cov = w * (Mat::Identity(spec.d, spec.d) + class_mean_cov(spec)) * w.transpose();
    cov.diagonal().array() += sigma * sigma;
    return {w * centre, cov};
}

AnalyticNoisePredictor::AnalyticNoisePredictor(const GeneratorSpec& spec, const NoiseSchedule& schedule)
    : oracle_(spec), schedule_(schedule) {
    const int k = spec.num_classes;
    joint_.means.resize(k, spec.audio_dim() + spec.video_dim());
    for (int c = 0; c < k; ++c) joint_.means.row(c) = oracle_.joint_class_mean(c).transpose();
    Eigen::SelfAdjointEigenSolver<Mat> joint_eig(oracle_.joint_cov());
    joint_.basis = joint_eig.eigenvectors();
    joint_.eigenvalues = joint_eig.eigenvalues();
    for (Modality given : {Modality::Audio, Modality::Video}) {
        Eigen::SelfAdjointEigenSolver<Mat> eig(oracle_.conditional_cov(given));
        cond_[idx(given)].basis = eig.eigenvectors();
        cond_[idx(given)].eigenvalues = eig.eigenvalues().cwiseMax(0.0);
    }
}

Vec AnalyticNoisePredictor::mixture_eps(const Mixture& mix, const Vec& weights, const Vec& z, double alpha_bar) const {
    const Vec var = (alpha_bar * mix.eigenvalues.array() + (1.0 - alpha_bar)).matrix();
    const double root = std::sqrt(alpha_bar);
    const Eigen::Index k = mix.means.rows();
    Mat whitened(mix.basis.cols(), k);
    Vec logits(k);
    for (Eigen::Index c = 0; c < k; ++c) {
        const Vec y = mix.basis.transpose() * (z - root * mix.means.row(c).transpose());
        whitened.col(c) = y.cwiseQuotient(var);
        logits[c] = weights[c] > 0.0 ? std::log(weights[c]) - 0.5 * y.dot(whitened.col(c))
                                     : -std::numeric_limits<double>::infinity();
    }
    const Vec r = softmax(logits);
    return std::sqrt(1.0 - alpha_bar) * (mix.basis * (whitened * r));
}

Mat AnalyticNoisePredictor::predict_noise(const DenoiserBatch& batch) const {
    const ModalityLayout& l = layout();
    const GeneratorSpec& spec = oracle_.spec();
    const int plen = l.packed_len();
    const int k = spec.num_classes;
    Mat out = Mat::Zero(batch.tokens.rows(), batch.tokens.cols());
    for (int b = 0; b < batch.size(); ++b) {
        const auto block = batch.tokens.middleRows(b * plen, plen);
        const Vec audio = unpack_modality(block, l, Modality::Audio);
        const Vec video = unpack_modality(block, l, Modality::Video);
        const int cls = batch.classes[b];
        const double ab = schedule_.alpha_bar(batch.steps[b]);
        Vec prior = Vec::Constant(k, 1.0 / k);
        if (cls != kNullClass) {
            prior.setZero();
            prior[cls] = 1.0;
        }
        Vec eps_audio = Vec::Zero(audio.size());
        Vec eps_video = Vec::Zero(video.size());
        switch (batch.tasks[b]) {
            case TaskId::T2AV: {
                Vec z(audio.size() + video.size());
                z << audio, video;
                const Vec e = mixture_eps(joint_, prior, z, ab);
                eps_audio = e.head(audio.size());
                eps_video = e.tail(video.size());
                break;
            }
            case TaskId::A2V:
            case TaskId::V2A: {
                const Modality given = batch.tasks[b] == TaskId::A2V ? Modality::Audio : Modality::Video;
                const Vec& clean = given == Modality::Audio ? audio : video;
                const Vec& noised = given == Modality::Audio ? video : audio;
                // A class pins one component; otherwise weight by the class posterior of the clean value.
                const Vec weights = cls != kNullClass ? prior
                                    : given == Modality::Audio ? oracle_.posterior(&clean, nullptr)
                                                               : oracle_.posterior(nullptr, &clean);
                Mixture mix = cond_[idx(given)];
                mix.means.resize(k, noised.size());
                for (int c = 0; c < k; ++c) {
                    mix.means.row(c) = oracle_.conditional_class_mean(given, clean, c).transpose();
                }
                (given == Modality::Audio ? eps_video : eps_audio) = mixture_eps(mix, weights, noised, ab);
                break;
            }
        }
        Eigen::Ref<Mat> dst = out.middleRows(b * plen, plen);
        pack_into(eps_audio, eps_video, l, dst);
    }
    return out;
}

}  // namespace avdiff
