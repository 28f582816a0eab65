#include "avdiff/unified_latent.hpp"

#include "avdiff/digest.hpp"

#include <cmath>
#include <sstream>

namespace avdiff {

TaskId task_from_code(int code) {
    if (code < 0 || code >= kNumTasks) {
        throw FormatError("invalid task code " + std::to_string(code));
    }
    return static_cast<TaskId>(code);
}

TaskId parse_task(std::string_view name) {
    if (name == "t2av" || name == "T2AV") return TaskId::T2AV;
    if (name == "a2v" || name == "A2V") return TaskId::A2V;
    if (name == "v2a" || name == "V2A") return TaskId::V2A;
    throw std::invalid_argument("unknown task '" + std::string(name) + "' (expected t2av, a2v or v2a)");
}

std::string_view task_name(TaskId task) {
    switch (task) {
        case TaskId::T2AV: return "t2av";
        case TaskId::A2V: return "a2v";
        case TaskId::V2A: return "v2a";
    }
    return "?";
}

ModalityLayout::ModalityLayout(Shape audio_shape, Shape video_shape) : audio_(audio_shape), video_(video_shape) {
    for (int v : audio_) {
        if (v < 1) throw ShapeError("layout: audio dimensions must be >= 1");
    }
    for (int v : video_) {
        if (v < 1) throw ShapeError("layout: video dimensions must be >= 1");
    }
    if (audio_[3] != 1) {
        throw ShapeError("layout: audio shape must be (channels, frames, bins, 1)");
    }
}

std::string shape_to_string(const ModalityLayout::Shape& shape) {
    return std::to_string(shape[0]) + "," + std::to_string(shape[1]) + "," + std::to_string(shape[2]) + "," +
           std::to_string(shape[3]);
}

ModalityLayout::Shape parse_shape(const std::string& text) {
    ModalityLayout::Shape shape{};
    std::stringstream ss(text);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= 4) throw FormatError("shape '" + text + "' has more than 4 entries");
        try {
            std::size_t used = 0;
            shape[i] = std::stoi(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw FormatError("shape '" + text + "' has a non-integer entry");
        }
        ++i;
    }
    if (i != 4) throw FormatError("shape '" + text + "' must have 4 entries");
    return shape;
}

std::string ModalityLayout::to_string() const {
    return "audio=" + shape_to_string(audio_) + " video=" + shape_to_string(video_);
}

ModalityLayout ModalityLayout::parse(const std::string& text) {
    std::istringstream in(text);
    std::string a, v;
    in >> a >> v;
    if (a.rfind("audio=", 0) != 0 || v.rfind("video=", 0) != 0) {
        throw FormatError("malformed layout '" + text + "'");
    }
    try {
        return ModalityLayout(parse_shape(a.substr(6)), parse_shape(v.substr(6)));
    } catch (const ShapeError& e) {
        throw FormatError(e.what());
    }
}

std::uint64_t ModalityLayout::digest() const { return fnv1a64(to_string()); }

void pack_into(const Vec& audio, const Vec& video, const ModalityLayout& layout, Eigen::Ref<Mat> out) {
    if (audio.size() != layout.audio_flat_dim()) throw ShapeError("pack: audio size does not match layout");
    if (video.size() != layout.video_flat_dim()) throw ShapeError("pack: video size does not match layout");
    if (out.rows() != layout.packed_len() || out.cols() != layout.token_dim()) {
        throw ShapeError("pack: output block has wrong shape");
    }
    out.setZero();
    const int na = layout.audio_token_count();
    for (int c = 0; c < layout.audio_channels(); ++c) {
        for (int i = 0; i < na; ++i) out(i, c) = audio[c * na + i];
    }
    const int nv = layout.video_token_count();
    for (int c = 0; c < layout.video_channels(); ++c) {
        for (int i = 0; i < nv; ++i) out(na + i, c) = video[c * nv + i];
    }
}

UnifiedLatent pack(const Vec& audio, const Vec& video, const ModalityLayout& layout) {
    UnifiedLatent u{Mat(layout.packed_len(), layout.token_dim()), layout};
    pack_into(audio, video, layout, u.data);
    return u;
}

Vec unpack_modality(const Eigen::Ref<const Mat>& packed, const ModalityLayout& layout, Modality m) {
    if (packed.rows() != layout.packed_len() || packed.cols() != layout.token_dim()) {
        throw ShapeError("unpack: latent shape does not match its layout");
    }
    const int n = layout.token_count(m);
    const int off = layout.token_offset(m);
    Vec out(layout.flat_dim(m));
    for (int c = 0; c < layout.channels(m); ++c) {
        for (int i = 0; i < n; ++i) out[c * n + i] = packed(off + i, c);
    }
    return out;
}

std::pair<Vec, Vec> unpack(const UnifiedLatent& u) {
    return {unpack_modality(u.data, u.layout, Modality::Audio), unpack_modality(u.data, u.layout, Modality::Video)};
}

Vec modality_mask(const ModalityLayout& layout, Modality m) {
    Vec mask = Vec::Zero(layout.packed_len());
    mask.segment(layout.token_offset(m), layout.token_count(m)).setOnes();
    return mask;
}

Mat element_mask(const ModalityLayout& layout, bool audio, bool video) {
    Mat mask = Mat::Zero(layout.packed_len(), layout.token_dim());
    if (audio) {
        mask.block(0, 0, layout.audio_token_count(), layout.audio_channels()).setOnes();
    }
    if (video) {
        mask.block(layout.audio_token_count(), 0, layout.video_token_count(), layout.video_channels()).setOnes();
    }
    return mask;
}

RowVec task_token(TaskId task, const Mat& table) {
    if (table.rows() != kNumTasks) throw ShapeError("task token table must have 3 rows");
    return table.row(task_code(task));
}

Vec time_embed(double t, int dim) {
    if (dim <= 0 || dim % 2 != 0) {
        throw std::invalid_argument("time_embed: dimension must be positive and even");
    }
    Vec out(dim);
    for (int i = 0; i < dim / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * i / dim);
        out[2 * i] = std::sin(t * freq);
        out[2 * i + 1] = std::cos(t * freq);
    }
    return out;
}

Mat patchify(const UnifiedLatent& u, const RowVec& task_tok, const PatchEmbed& params) {
    const int p = u.layout.packed_len();
    const Eigen::Index dim = params.weight.cols();
    if (u.data.rows() != p || u.data.cols() != params.weight.rows()) {
        throw ShapeError("patchify: latent token_dim does not match embedder");
    }
    if (params.bias.size() != dim || task_tok.size() != dim || params.positions.rows() != p + 1 ||
        params.positions.cols() != dim) {
        throw ShapeError("patchify: parameter dimensions disagree");
    }
    Mat seq(p + 1, dim);
    seq.topRows(p) = (u.data * params.weight).rowwise() + params.bias;
    seq.row(p) = task_tok;
    seq += params.positions;
    return seq;
}

UnifiedLatent unpatchify(const Mat& seq, const Unpatch& params, const ModalityLayout& layout) {
    const int p = layout.packed_len();
    if (seq.rows() != p + 1) {
        throw ShapeError("unpatchify: sequence length must be packed_len + 1");
    }
    if (seq.cols() != params.weight.rows() || params.weight.cols() != layout.token_dim() ||
        params.bias.size() != layout.token_dim()) {
        throw ShapeError("unpatchify: parameter dimensions disagree");
    }
    UnifiedLatent out{Mat((seq.topRows(p) * params.weight).rowwise() + params.bias), layout};
    return out;
}

}  // namespace avdiff
