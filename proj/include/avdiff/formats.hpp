#pragma once

#include "avdiff/denoiser.hpp"
#include "avdiff/diffusion_math.hpp"
#include "avdiff/sampler.hpp"
#include "avdiff/toy_data.hpp"
#include "avdiff/train.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace avdiff {

struct DataConfig {
    int d = 2;
    int num_classes = 3;
    double separation = 4.0;
    double sigma_audio = 0.5;
    double sigma_video = 0.5;
    /// Seeds the class means and mixing matrices; sample draws use the run seed.
    std::uint64_t generator_seed = 0;
    int count = 10000;

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

/// Flat `key = value` run configuration. Every key has a default; unknown keys
/// are rejected. Component seeds all follow the top-level `seed`.
struct RunConfig {
    std::uint64_t seed = 0;
    DataConfig data;
    ModalityLayout layout{{1, 4, 2, 1}, {1, 2, 2, 2}};
    ScheduleConfig schedule;
    DenoiserConfig model;
    TrainConfig train;
    SamplerConfig sampler;

    RunConfig();

    static RunConfig parse(std::string_view text);
    static RunConfig load(const std::filesystem::path& path);

    /// Applies one `key = value` pair; throws FormatError on unknown keys or bad values.
    void set(const std::string& key, const std::string& value);

    /// Copies shared settings (layout, K, seed) into the component configs and
    /// validates them all.
    void resolve();

    /// Canonical text of every key in fixed order.
    std::string to_text() const;
    std::uint64_t digest() const;

    GeneratorSpec make_generator() const;
};

/// Shortest round-trip decimal text of a double.
std::string format_double(double x);
double parse_double(std::string_view text);

/// Parses `key = value` lines with `#` comments into an ordered map.
/// Duplicate keys are a FormatError.
std::map<std::string, std::string> parse_key_values(std::string_view text);
std::string write_key_values(const std::map<std::string, std::string>& entries);

/// Dataset of latent pairs. Audio/video rows use the flat modality order.
struct TensorContainer {
    ModalityLayout layout;
    int num_classes = 0;
    Mat audio;
    Mat video;
    std::vector<int> classes;  // kNullClass for unlabeled records

    int count() const { return static_cast<int>(classes.size()); }
    void validate() const;
};

/// Text magic line, text header, then per record: float32 LE audio, float32 LE
/// video, int32 LE class id.
std::string encode_container(const TensorContainer& c);
TensorContainer decode_container(std::string_view bytes);

void write_container(const std::filesystem::path& path, const TensorContainer& c);
TensorContainer read_container(const std::filesystem::path& path);

/// `<path>.meta` key/value sidecar.
std::filesystem::path meta_path(const std::filesystem::path& path);
void write_meta(const std::filesystem::path& path, const std::map<std::string, std::string>& meta);
std::map<std::string, std::string> read_meta(const std::filesystem::path& path);

/// GeneratorSpec text with exact (hex float) values.
std::string encode_generator(const GeneratorSpec& spec);
GeneratorSpec decode_generator(std::string_view text);
std::filesystem::path generator_path(const std::filesystem::path& path);
void write_generator(const std::filesystem::path& path, const GeneratorSpec& spec);
GeneratorSpec read_generator(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes via a temporary file and rename; throws std::runtime_error if unwritable.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace avdiff
