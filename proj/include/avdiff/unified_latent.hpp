#pragma once

#include "avdiff/types.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <string>
#include <utility>

namespace avdiff {

/// Shapes of the two modality grids and the packed token sequence.
///
/// Audio is (channels, frames, bins, 1); video is (channels, frames, height, width).
/// Each grid cell becomes one token. Audio tokens occupy [0, audio_token_count),
/// video tokens the remainder. Within a modality tokens are ordered row-major over
/// (frame, bin) or (frame, row, col). Channels become the token feature vector,
/// zero-padded to the shared token_dim.
class ModalityLayout {
public:
    using Shape = std::array<int, 4>;

    ModalityLayout() = default;
    ModalityLayout(Shape audio_shape, Shape video_shape);

    const Shape& audio_shape() const { return audio_; }
    const Shape& video_shape() const { return video_; }

    int audio_channels() const { return audio_[0]; }
    int video_channels() const { return video_[0]; }
    int audio_frames() const { return audio_[1]; }
    int video_frames() const { return video_[1]; }
    int audio_bins() const { return audio_[2]; }
    int video_cells_per_frame() const { return video_[2] * video_[3]; }

    int audio_token_count() const { return audio_[1] * audio_[2]; }
    int video_token_count() const { return video_[1] * video_[2] * video_[3]; }
    int packed_len() const { return audio_token_count() + video_token_count(); }
    int token_dim() const { return std::max(audio_[0], video_[0]); }

    int audio_flat_dim() const { return audio_[0] * audio_token_count(); }
    int video_flat_dim() const { return video_[0] * video_token_count(); }
    int flat_dim(Modality m) const { return m == Modality::Audio ? audio_flat_dim() : video_flat_dim(); }

    /// First packed index and token count of a modality.
    int token_offset(Modality m) const { return m == Modality::Audio ? 0 : audio_token_count(); }
    int token_count(Modality m) const { return m == Modality::Audio ? audio_token_count() : video_token_count(); }
    int channels(Modality m) const { return m == Modality::Audio ? audio_channels() : video_channels(); }

    /// Canonical text form, e.g. "audio=1,4,2,1 video=1,2,2,2".
    std::string to_string() const;
    static ModalityLayout parse(const std::string& text);
    std::uint64_t digest() const;

    friend bool operator==(const ModalityLayout&, const ModalityLayout&) = default;

private:
    Shape audio_{1, 1, 1, 1};
    Shape video_{1, 1, 1, 1};
};

ModalityLayout::Shape parse_shape(const std::string& text);
std::string shape_to_string(const ModalityLayout::Shape& shape);

/// Packed audio+video token grid, (packed_len x token_dim).
struct UnifiedLatent {
    Mat data;
    ModalityLayout layout;
};

/// Flattened modality latents are in (C, frames, ...) row-major order.
UnifiedLatent pack(const Vec& audio, const Vec& video, const ModalityLayout& layout);
std::pair<Vec, Vec> unpack(const UnifiedLatent& u);

/// Packs into / reads from a caller-provided (packed_len x token_dim) block.
void pack_into(const Vec& audio, const Vec& video, const ModalityLayout& layout, Eigen::Ref<Mat> out);
Vec unpack_modality(const Eigen::Ref<const Mat>& packed, const ModalityLayout& layout, Modality m);

/// 1 on the modality's token indices, 0 elsewhere; length packed_len.
Vec modality_mask(const ModalityLayout& layout, Modality m);

/// Element mask (packed_len x token_dim) over the real channels of the selected
/// modalities; padded channels are always 0.
Mat element_mask(const ModalityLayout& layout, bool audio, bool video);

/// Row `task` of a (3 x model_dim) task-token table.
RowVec task_token(TaskId task, const Mat& table);

/// Sinusoidal embedding: (sin, cos) pairs of t / 10000^(2i/dim).
Vec time_embed(double t, int dim);

struct PatchEmbed {
    Mat weight;     // token_dim x model_dim
    RowVec bias;    // model_dim
    Mat positions;  // (packed_len + 1) x model_dim
};

struct Unpatch {
    Mat weight;   // model_dim x token_dim
    RowVec bias;  // token_dim
};

/// Affine-lifts each latent token into model_dim, appends the task token as the
/// last position and adds the positional table. Output is (packed_len + 1) x model_dim.
Mat patchify(const UnifiedLatent& u, const RowVec& task_tok, const PatchEmbed& params);

/// Drops the task-token position and maps each remaining row back to token_dim.
UnifiedLatent unpatchify(const Mat& seq, const Unpatch& params, const ModalityLayout& layout);

}  // namespace avdiff
