#include "avdiff/denoiser.hpp"

#include "avdiff/digest.hpp"
#include "avdiff/rng.hpp"
#include "avdiff/tasks.hpp"

#include <cmath>

namespace avdiff {

namespace {

using Eigen::Index;
using Eigen::seqN;

constexpr double kNormEps = 1e-5;

// Query rows and key rows of one attention group, as arithmetic sequences.
struct Group {
    Index q0, qn, qs;
    Index k0, kn, ks;
};

// Temporal pass: tokens sharing a bin (audio) or pixel (video) attend across
// frames; the task token forms its own group.
std::vector<Group> temporal_groups(const DenoiserConfig& cfg, int batch) {
    const ModalityLayout& l = cfg.layout;
    const Index seq = cfg.seq_len();
    const Index bins = l.audio_bins();
    const Index cells = l.video_cells_per_frame();
    const Index na = l.audio_token_count();
    std::vector<Group> groups;
    groups.reserve(static_cast<std::size_t>(batch) * (bins + cells + 1));
    for (Index b = 0; b < batch; ++b) {
        const Index base = b * seq;
        for (Index f = 0; f < bins; ++f) {
            groups.push_back({base + f, l.audio_frames(), bins, base + f, l.audio_frames(), bins});
        }
        for (Index c = 0; c < cells; ++c) {
            groups.push_back({base + na + c, l.video_frames(), cells, base + na + c, l.video_frames(), cells});
        }
        groups.push_back({base + seq - 1, 1, 1, base + seq - 1, 1, 1});
    }
    return groups;
}

// Spatial pass: every position of an example, both modalities and the task token.
std::vector<Group> spatial_groups(const DenoiserConfig& cfg, int batch) {
    const Index seq = cfg.seq_len();
    std::vector<Group> groups;
    for (Index b = 0; b < batch; ++b) groups.push_back({b * seq, seq, 1, b * seq, seq, 1});
    return groups;
}

// Cross pass: every position of example b attends to its single condition row.
std::vector<Group> cross_groups(const DenoiserConfig& cfg, int batch) {
    const Index seq = cfg.seq_len();
    std::vector<Group> groups;
    for (Index b = 0; b < batch; ++b) groups.push_back({b * seq, seq, 1, b, 1, 1});
    return groups;
}

struct NormCache {
    Mat xhat;
    Vec inv_std;
};

Mat norm_forward(const Mat& x, const NormParams& p, NormCache* cache) {
    const Vec mean = x.rowwise().mean();
    Mat xhat = x.colwise() - mean;
    const Vec inv = ((xhat.array().square().rowwise().mean()) + kNormEps).rsqrt().matrix();
    xhat = inv.asDiagonal() * xhat;
    Mat y = (xhat.array().rowwise() * p.gain.array()).rowwise() + p.bias.array();
    if (cache != nullptr) {
        cache->xhat = std::move(xhat);
        cache->inv_std = inv;
    }
    return y;
}

Mat norm_backward(const Mat& dy, const NormParams& p, const NormCache& c, NormParams& g) {
    g.gain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    g.bias += dy.colwise().sum();
    const Mat dxhat = dy.array().rowwise() * p.gain.array();
    const Vec m1 = dxhat.rowwise().mean();
    const Vec m2 = (dxhat.array() * c.xhat.array()).rowwise().mean();
    Mat dx = (dxhat.colwise() - m1).array() - c.xhat.array().colwise() * m2.array();
    return c.inv_std.asDiagonal() * dx;
}

struct AttnCache {
    Mat xq, xk, q, k, v, o;
    std::vector<Mat> probs;  // group-major, then head
};

Mat attention_forward(const Mat& xq, const Mat& xk, const AttentionParams& p, const std::vector<Group>& groups,
                      int heads, AttnCache* cache) {
    Mat q = xq * p.wq;
    Mat k = xk * p.wk;
    Mat v = xk * p.wv;
    const Index dh = q.cols() / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat o = Mat::Zero(q.rows(), q.cols());
    if (cache != nullptr) cache->probs.resize(groups.size() * heads);
    Mat qg, kg, vg, a;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const Group& g = groups[gi];
        const auto qrows = seqN(g.q0, g.qn, g.qs);
        const auto krows = seqN(g.k0, g.kn, g.ks);
        for (int h = 0; h < heads; ++h) {
            const auto cols = seqN(h * dh, dh);
            qg = q(qrows, cols);
            kg = k(krows, cols);
            vg = v(krows, cols);
            a.noalias() = scale * (qg * kg.transpose());
            a.colwise() -= a.rowwise().maxCoeff();
            a = a.array().exp();
            a = a.array().colwise() / a.rowwise().sum().array();
            o(qrows, cols) = a * vg;
            if (cache != nullptr) cache->probs[gi * heads + h] = a;
        }
    }
    Mat y = (o * p.wo).rowwise() + p.bo;
    if (cache != nullptr) {
        cache->xq = xq;
        cache->xk = xk;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->o = std::move(o);
    }
    return y;
}

void attention_backward(const Mat& dy, const AttentionParams& p, const std::vector<Group>& groups, int heads,
                        const AttnCache& c, AttentionParams& g, Mat& dxq, Mat& dxk) {
    g.wo.noalias() += c.o.transpose() * dy;
    g.bo += dy.colwise().sum();
    const Mat dout = dy * p.wo.transpose();
    Mat dq = Mat::Zero(c.q.rows(), c.q.cols());
    Mat dk = Mat::Zero(c.k.rows(), c.k.cols());
    Mat dv = Mat::Zero(c.v.rows(), c.v.cols());
    const Index dh = c.q.cols() / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Mat qg, kg, vg, dog, da, ds;
    Vec rs;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const Group& grp = groups[gi];
        const auto qrows = seqN(grp.q0, grp.qn, grp.qs);
        const auto krows = seqN(grp.k0, grp.kn, grp.ks);
        for (int h = 0; h < heads; ++h) {
            const auto cols = seqN(h * dh, dh);
            const Mat& a = c.probs[gi * heads + h];
            qg = c.q(qrows, cols);
            kg = c.k(krows, cols);
            vg = c.v(krows, cols);
            dog = dout(qrows, cols);
            da.noalias() = dog * vg.transpose();
            dv(krows, cols) += a.transpose() * dog;
            rs = (da.array() * a.array()).rowwise().sum();
            ds = (a.array() * (da.array().colwise() - rs.array())) * scale;
            dq(qrows, cols) += ds * kg;
            dk(krows, cols) += ds.transpose() * qg;
        }
    }
    g.wq.noalias() += c.xq.transpose() * dq;
    g.wk.noalias() += c.xk.transpose() * dk;
    g.wv.noalias() += c.xk.transpose() * dv;
    dxq.noalias() = dq * p.wq.transpose();
    dxk.noalias() = dk * p.wk.transpose();
    dxk.noalias() += dv * p.wv.transpose();
}

constexpr double kGeluK = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluC = 0.044715;

struct FfnCache {
    Mat x, z1, a1;
};

Mat ffn_forward(const Mat& x, const BlockParams& b, FfnCache* cache) {
    Mat z1 = (x * b.ffn_w1).rowwise() + b.ffn_b1;
    Mat a1 = z1.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::tanh(kGeluK * (v + kGeluC * v * v * v))); });
    Mat y = (a1 * b.ffn_w2).rowwise() + b.ffn_b2;
    if (cache != nullptr) {
        cache->x = x;
        cache->z1 = std::move(z1);
        cache->a1 = std::move(a1);
    }
    return y;
}

Mat ffn_backward(const Mat& dy, const BlockParams& b, const FfnCache& c, BlockParams& g) {
    g.ffn_w2.noalias() += c.a1.transpose() * dy;
    g.ffn_b2 += dy.colwise().sum();
    Mat dz = dy * b.ffn_w2.transpose();
    dz.array() *= c.z1.unaryExpr([](double v) {
        const double th = std::tanh(kGeluK * (v + kGeluC * v * v * v));
        return 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * kGeluK * (1.0 + 3.0 * kGeluC * v * v);
    }).array();
    g.ffn_w1.noalias() += c.x.transpose() * dz;
    g.ffn_b1 += dz.colwise().sum();
    return dz * b.ffn_w1.transpose();
}

double silu(double v) { return v / (1.0 + std::exp(-v)); }

double silu_grad(double v) {
    const double s = 1.0 / (1.0 + std::exp(-v));
    return s * (1.0 + v * (1.0 - s));
}

struct BlockCache {
    NormCache nt, ns, nc, nf;
    AttnCache at, as, ac;
    FfnCache ff;
};

struct ForwardCache {
    Mat sinus, tz1, ta1;
    Mat cond;
    std::vector<BlockCache> blocks;
    Mat normed;
};

struct Groups {
    std::vector<Group> temporal, spatial, cross;
};

void validate_batch(const DenoiserConfig& cfg, const DenoiserBatch& batch, int max_step) {
    const int n = batch.size();
    const int p = cfg.layout.packed_len();
    if (n == 0) throw std::invalid_argument("denoiser: empty batch");
    if (batch.tasks.size() != static_cast<std::size_t>(n) || batch.classes.size() != static_cast<std::size_t>(n)) {
        throw ShapeError("denoiser: batch vectors disagree in length");
    }
    if (batch.tokens.rows() != static_cast<Index>(n) * p || batch.tokens.cols() != cfg.layout.token_dim()) {
        throw ShapeError("denoiser: token block does not match layout");
    }
    for (int i = 0; i < n; ++i) {
        if (batch.steps[i] < 1 || batch.steps[i] > max_step) {
            throw std::out_of_range("denoiser: step " + std::to_string(batch.steps[i]) + " outside [1, " +
                                    std::to_string(max_step) + "]");
        }
        if (batch.classes[i] != kNullClass && (batch.classes[i] < 0 || batch.classes[i] >= cfg.num_classes)) {
            throw std::out_of_range("denoiser: class id " + std::to_string(batch.classes[i]) + " outside [0, " +
                                    std::to_string(cfg.num_classes) + ")");
        }
    }
}

Mat run_forward(const DenoiserParameters& p, const DenoiserConfig& cfg, const DenoiserBatch& batch,
                const Groups& groups, ForwardCache* cache) {
    const int n = batch.size();
    const Index seq = cfg.seq_len();
    const Index plen = cfg.layout.packed_len();
    const Index dim = cfg.model_dim;

    // Patch embedding, task token, positions.
    const Mat embedded = (batch.tokens * p.patch.weight).rowwise() + p.patch.bias;
    Mat h(n * seq, dim);
    for (int b = 0; b < n; ++b) {
        h.middleRows(b * seq, plen) = embedded.middleRows(b * plen, plen);
        h.row(b * seq + plen) = p.task_table.row(task_code(batch.tasks[b]));
        h.middleRows(b * seq, seq) += p.patch.positions;
    }

    // Time embedding, added to every position.
    Mat sinus(n, dim);
    for (int b = 0; b < n; ++b) sinus.row(b) = time_embed(batch.steps[b], static_cast<int>(dim)).transpose();
    Mat tz1 = (sinus * p.time_w1).rowwise() + p.time_b1;
    Mat ta1 = tz1.unaryExpr(&silu);
    const Mat temb = (ta1 * p.time_w2).rowwise() + p.time_b2;
    for (int b = 0; b < n; ++b) h.middleRows(b * seq, seq).rowwise() += temb.row(b);

    Mat cond(n, cfg.cond_dim);
    for (int b = 0; b < n; ++b) {
        const int row = batch.classes[b] == kNullClass ? cfg.num_classes : batch.classes[b];
        cond.row(b) = p.class_table.row(row);
    }

    if (cache != nullptr) cache->blocks.resize(p.blocks.size());
    for (std::size_t i = 0; i < p.blocks.size(); ++i) {
        const BlockParams& bp = p.blocks[i];
        BlockCache* bc = cache != nullptr ? &cache->blocks[i] : nullptr;
        if (cfg.attention) {
            Mat u = norm_forward(h, bp.norm_temporal, bc ? &bc->nt : nullptr);
            h += attention_forward(u, u, bp.temporal, groups.temporal, cfg.num_heads, bc ? &bc->at : nullptr);
            u = norm_forward(h, bp.norm_spatial, bc ? &bc->ns : nullptr);
            h += attention_forward(u, u, bp.spatial, groups.spatial, cfg.num_heads, bc ? &bc->as : nullptr);
        }
        Mat u = norm_forward(h, bp.norm_cross, bc ? &bc->nc : nullptr);
        h += attention_forward(u, cond, bp.cross, groups.cross, cfg.num_heads, bc ? &bc->ac : nullptr);
        u = norm_forward(h, bp.norm_ffn, bc ? &bc->nf : nullptr);
        h += ffn_forward(u, bp, bc ? &bc->ff : nullptr);
    }

    // Unpatchify: drop the task position, map back to token_dim.
    Mat latent(n * plen, dim);
    for (int b = 0; b < n; ++b) latent.middleRows(b * plen, plen) = h.middleRows(b * seq, plen);
    Mat out = (latent * p.out.weight).rowwise() + p.out.bias;
    const Mat gain = (ta1 * p.skip_weight).rowwise() + p.skip_bias;
    for (int b = 0; b < n; ++b) {
        out.middleRows(b * plen, plen).array() +=
            batch.tokens.middleRows(b * plen, plen).array().rowwise() * gain.row(b).array();
    }

    if (cache != nullptr) {
        cache->sinus = std::move(sinus);
        cache->tz1 = std::move(tz1);
        cache->ta1 = std::move(ta1);
        cache->cond = std::move(cond);
        cache->normed = std::move(latent);
    }
    return out;
}

void run_backward(const DenoiserParameters& p, const DenoiserConfig& cfg, const DenoiserBatch& batch,
                  const Groups& groups, const ForwardCache& cache, const Mat& dout, DenoiserParameters& g) {
    const int n = batch.size();
    const Index seq = cfg.seq_len();
    const Index plen = cfg.layout.packed_len();
    const Index dim = cfg.model_dim;

    g.out.weight.noalias() += cache.normed.transpose() * dout;
    g.out.bias += dout.colwise().sum();
    const Mat dlatent = dout * p.out.weight.transpose();
    Mat dgain(n, dout.cols());
    for (int b = 0; b < n; ++b) {
        dgain.row(b) = dout.middleRows(b * plen, plen).cwiseProduct(batch.tokens.middleRows(b * plen, plen)).colwise().sum();
    }
    g.skip_weight.noalias() += cache.ta1.transpose() * dgain;
    g.skip_bias += dgain.colwise().sum();

    Mat dh = Mat::Zero(n * seq, dim);
    for (int b = 0; b < n; ++b) dh.middleRows(b * seq, plen) = dlatent.middleRows(b * plen, plen);

    Mat dcond = Mat::Zero(n, cfg.cond_dim);
    Mat dxq, dxk;
    for (std::size_t ii = p.blocks.size(); ii-- > 0;) {
        const BlockParams& bp = p.blocks[ii];
        BlockParams& gb = g.blocks[ii];
        const BlockCache& bc = cache.blocks[ii];

        dh += norm_backward(ffn_backward(dh, bp, bc.ff, gb), bp.norm_ffn, bc.nf, gb.norm_ffn);

        attention_backward(dh, bp.cross, groups.cross, cfg.num_heads, bc.ac, gb.cross, dxq, dxk);
        dh += norm_backward(dxq, bp.norm_cross, bc.nc, gb.norm_cross);
        dcond += dxk;

        if (cfg.attention) {
            attention_backward(dh, bp.spatial, groups.spatial, cfg.num_heads, bc.as, gb.spatial, dxq, dxk);
            dxq += dxk;
            dh += norm_backward(dxq, bp.norm_spatial, bc.ns, gb.norm_spatial);
            attention_backward(dh, bp.temporal, groups.temporal, cfg.num_heads, bc.at, gb.temporal, dxq, dxk);
            dxq += dxk;
            dh += norm_backward(dxq, bp.norm_temporal, bc.nt, gb.norm_temporal);
        }
    }

    for (int b = 0; b < n; ++b) {
        const int row = batch.classes[b] == kNullClass ? cfg.num_classes : batch.classes[b];
        g.class_table.row(row) += dcond.row(b);
    }

    Mat dtemb(n, dim);
    for (int b = 0; b < n; ++b) {
        const auto block = dh.middleRows(b * seq, seq);
        dtemb.row(b) = block.colwise().sum();
        g.patch.positions += block;
        g.task_table.row(task_code(batch.tasks[b])) += dh.row(b * seq + plen);
    }
    g.time_w2.noalias() += cache.ta1.transpose() * dtemb;
    g.time_b2 += dtemb.colwise().sum();
    Mat dz1 = dtemb * p.time_w2.transpose() + dgain * p.skip_weight.transpose();
    dz1.array() *= cache.tz1.unaryExpr(&silu_grad).array();
    g.time_w1.noalias() += cache.sinus.transpose() * dz1;
    g.time_b1 += dz1.colwise().sum();

    Mat dembedded(n * plen, dim);
    for (int b = 0; b < n; ++b) dembedded.middleRows(b * plen, plen) = dh.middleRows(b * seq, plen);
    g.patch.weight.noalias() += batch.tokens.transpose() * dembedded;
    g.patch.bias += dembedded.colwise().sum();
}

Groups make_groups(const DenoiserConfig& cfg, int n) {
    Groups groups;
    if (cfg.attention) {
        groups.temporal = temporal_groups(cfg, n);
        groups.spatial = spatial_groups(cfg, n);
    }
    groups.cross = cross_groups(cfg, n);
    return groups;
}

double loss_and_output_grad(const DenoiserConfig& cfg, const DenoiserBatch& batch, const LossTargets& targets,
                            const NoiseSchedule& s, const Mat& eps_hat, Mat* dout) {
    const int n = batch.size();
    const Index plen = cfg.layout.packed_len();
    require_same_shape(targets.eps, eps_hat, "denoiser loss targets");
    require_same_shape(targets.mask, eps_hat, "denoiser loss mask");
    double total = 0.0;
    if (dout != nullptr) dout->resize(eps_hat.rows(), eps_hat.cols());
    for (int b = 0; b < n; ++b) {
        const double w = s.loss_weight(batch.steps[b]);
        if (dout != nullptr) {
            Eigen::Ref<Mat> gblock = dout->middleRows(b * plen, plen);
            total += masked_modality_loss(targets.eps.middleRows(b * plen, plen), eps_hat.middleRows(b * plen, plen),
                                          targets.mask.middleRows(b * plen, plen), cfg.layout, w, &gblock);
        } else {
            total += masked_modality_loss(targets.eps.middleRows(b * plen, plen), eps_hat.middleRows(b * plen, plen),
                                          targets.mask.middleRows(b * plen, plen), cfg.layout, w);
        }
    }
    if (dout != nullptr) *dout /= static_cast<double>(n);
    const double loss = total / n;
    if (!std::isfinite(loss)) throw NumericalError("denoiser: non-finite loss");
    return loss;
}

void fill_uniform(Mat& m, Index rows, Index cols, double bound, Rng& rng) {
    m.resize(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = bound * (2.0 * rng.uniform() - 1.0);
}

void fill_normal(Mat& m, Index rows, Index cols, double stddev, Rng& rng) {
    m = stddev * rng.normal_matrix(rows, cols);
}

void init_linear(Mat& w, Index fan_in, Index fan_out, Rng& rng) {
    fill_uniform(w, fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

NormParams unit_norm(Index dim) { return {RowVec::Ones(dim), RowVec::Zero(dim)}; }

void init_attention(AttentionParams& a, Index query_dim, Index key_dim, Index dim, Rng& rng) {
    init_linear(a.wq, query_dim, dim, rng);
    init_linear(a.wk, key_dim, dim, rng);
    init_linear(a.wv, key_dim, dim, rng);
    init_linear(a.wo, dim, dim, rng);
    a.bo = RowVec::Zero(dim);
}

}  // namespace

void DenoiserConfig::validate() const {
    if (model_dim < 2 || model_dim % 2 != 0) throw std::invalid_argument("denoiser: model_dim must be even and >= 2");
    if (num_heads < 1 || model_dim % num_heads != 0) {
        throw std::invalid_argument("denoiser: model_dim must be divisible by num_heads");
    }
    if (num_blocks < 1) throw std::invalid_argument("denoiser: num_blocks must be >= 1");
    if (num_classes < 1) throw std::invalid_argument("denoiser: num_classes must be >= 1");
    if (cond_dim < 1) throw std::invalid_argument("denoiser: cond_dim must be >= 1");
    if (ffn_mult < 1) throw std::invalid_argument("denoiser: ffn_mult must be >= 1");
    if (precision != "f64") throw std::invalid_argument("denoiser: only f64 precision is supported");
}

std::size_t DenoiserParameters::parameter_count() const {
    std::size_t count = 0;
    for_each([&](const std::string&, const auto& t) { count += static_cast<std::size_t>(t.size()); });
    return count;
}

DenoiserParameters DenoiserParameters::zeros_like() const {
    DenoiserParameters z = *this;
    z.for_each([](const std::string&, auto& t) { t.setZero(); });
    return z;
}

bool DenoiserParameters::all_finite() const {
    bool ok = true;
    for_each([&](const std::string&, const auto& t) { ok = ok && t.allFinite(); });
    return ok;
}

std::uint64_t parameter_digest(const DenoiserParameters& p) {
    std::uint64_t h = fnv1a64(std::string_view("avdiff-params"));
    p.for_each([&](const std::string& name, const auto& t) {
        h = fnv1a64(name, h);
        const std::int64_t shape[2] = {static_cast<std::int64_t>(t.rows()), static_cast<std::int64_t>(t.cols())};
        h = fnv1a64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(shape), sizeof shape), h);
        h = fnv1a64(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(t.data()),
                                                  static_cast<std::size_t>(t.size()) * sizeof(double)),
                    h);
    });
    return h;
}

DenoiserParameters init_params(const DenoiserConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng = Rng(seed).split("denoiser-init");
    const Index dim = cfg.model_dim;
    const Index td = cfg.layout.token_dim();
    DenoiserParameters p;

    init_linear(p.patch.weight, td, dim, rng);
    p.patch.bias = RowVec::Zero(dim);
    fill_normal(p.patch.positions, cfg.seq_len(), dim, 0.5, rng);
    fill_normal(p.task_table, kNumTasks, dim, 0.5, rng);
    fill_normal(p.class_table, cfg.num_classes + 1, cfg.cond_dim, 0.5, rng);
    init_linear(p.time_w1, dim, dim, rng);
    p.time_b1 = RowVec::Zero(dim);
    init_linear(p.time_w2, dim, dim, rng);
    p.time_b2 = RowVec::Zero(dim);

    const Index hidden = dim * cfg.ffn_mult;
    p.blocks.resize(static_cast<std::size_t>(cfg.num_blocks));
    for (BlockParams& b : p.blocks) {
        if (cfg.attention) {
            b.norm_temporal = unit_norm(dim);
            init_attention(b.temporal, dim, dim, dim, rng);
            b.norm_spatial = unit_norm(dim);
            init_attention(b.spatial, dim, dim, dim, rng);
        }
        b.norm_cross = unit_norm(dim);
        init_attention(b.cross, dim, cfg.cond_dim, dim, rng);
        b.norm_ffn = unit_norm(dim);
        init_linear(b.ffn_w1, dim, hidden, rng);
        b.ffn_b1 = RowVec::Zero(hidden);
        init_linear(b.ffn_w2, hidden, dim, rng);
        b.ffn_b2 = RowVec::Zero(dim);
    }
    p.out.weight = Mat::Zero(dim, td);
    p.out.bias = RowVec::Zero(td);
    p.skip_weight = Mat::Zero(dim, td);
    p.skip_bias = RowVec::Zero(td);
    return p;
}

Mat forward_batch(const DenoiserParameters& p, const DenoiserConfig& cfg, const DenoiserBatch& batch,
                  int max_step) {
    validate_batch(cfg, batch, max_step);
    return run_forward(p, cfg, batch, make_groups(cfg, batch.size()), nullptr);
}

UnifiedLatent forward(const DenoiserParameters& p, const DenoiserConfig& cfg, const UnifiedLatent& z_t, int t,
                      int max_step, TaskId task, std::optional<int> class_id, bool drop_text) {
    if (!(z_t.layout == cfg.layout)) throw ShapeError("denoiser: latent layout differs from model layout");
    DenoiserBatch batch;
    batch.tokens = z_t.data;
    batch.steps = {t};
    batch.tasks = {task};
    batch.classes = {(drop_text || !class_id) ? kNullClass : *class_id};
    if (class_id && (*class_id < 0 || *class_id >= cfg.num_classes)) {
        throw std::out_of_range("denoiser: class id outside [0, K)");
    }
    return UnifiedLatent{forward_batch(p, cfg, batch, max_step), cfg.layout};
}

LossAndGradients gradients(const DenoiserParameters& p, const DenoiserConfig& cfg, const DenoiserBatch& batch,
                           const LossTargets& targets, const NoiseSchedule& s) {
    validate_batch(cfg, batch, s.steps());
    const Groups groups = make_groups(cfg, batch.size());
    ForwardCache cache;
    const Mat eps_hat = run_forward(p, cfg, batch, groups, &cache);
    Mat dout;
    LossAndGradients result;
    result.loss = loss_and_output_grad(cfg, batch, targets, s, eps_hat, &dout);
    result.grads = p.zeros_like();
    run_backward(p, cfg, batch, groups, cache, dout, result.grads);
    return result;
}

double batch_loss(const DenoiserParameters& p, const DenoiserConfig& cfg, const DenoiserBatch& batch,
                  const LossTargets& targets, const NoiseSchedule& s) {
    const Mat eps_hat = forward_batch(p, cfg, batch, s.steps());
    return loss_and_output_grad(cfg, batch, targets, s, eps_hat, nullptr);
}

Mat DenoiserModel::predict_noise(const DenoiserBatch& batch) const {
    return forward_batch(params_, cfg_, batch, max_step_);
}

}  // namespace avdiff
