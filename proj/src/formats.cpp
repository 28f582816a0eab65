#include "avdiff/formats.hpp"

#include "avdiff/digest.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace avdiff {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

std::string trim(std::string_view s) {
    std::size_t a = 0;
    std::size_t b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return std::string(s.substr(a, b - a));
}

long long parse_integer(const std::string& key, const std::string& value) {
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw FormatError("config: '" + key + "' expects an integer, got '" + value + "'");
    }
    return out;
}

int parse_int(const std::string& key, const std::string& value) {
    const long long v = parse_integer(key, value);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
        throw FormatError("config: '" + key + "' is out of range");
    }
    return static_cast<int>(v);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
    if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw FormatError("config: '" + key + "' expects a non-negative integer, got '" + value + "'");
    }
    return out;
}

double parse_real(const std::string& key, const std::string& value) {
    try {
        return parse_double(value);
    } catch (const FormatError&) {
        throw FormatError("config: '" + key + "' expects a number, got '" + value + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    throw FormatError("config: '" + key + "' expects true or false, got '" + value + "'");
}

template <typename T>
void put_le(std::string& out, T value) {
    char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get_le(const char* p) {
    T value;
    std::memcpy(&value, p, sizeof(T));
    return value;
}

std::string hexfloat(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", x);
    return buf;
}

double parse_hexfloat(const std::string& token) {
    char* end = nullptr;
    const double v = std::strtod(token.c_str(), &end);
    if (token.empty() || end != token.c_str() + token.size()) {
        throw FormatError("generator file: bad number '" + token + "'");
    }
    return v;
}

void append_hex_matrix(std::string& out, const char* name, const Mat& m) {
    out += std::string(name) + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            if (j > 0) out += ' ';
            out += hexfloat(m(i, j));
        }
        out += '\n';
    }
}

Mat read_hex_matrix(std::istringstream& in, const char* name) {
    std::string tag;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    if (!(in >> tag >> rows >> cols) || tag != name || rows < 0 || cols < 0) {
        throw FormatError(std::string("generator file: expected matrix '") + name + "'");
    }
    Mat m(rows, cols);
    std::string token;
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            if (!(in >> token)) throw FormatError("generator file: truncated matrix");
            m(i, j) = parse_hexfloat(token);
        }
    }
    return m;
}

}  // namespace

std::string format_double(double x) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
    if (ec != std::errc()) throw std::logic_error("format_double failed");
    return std::string(buf, ptr);
}

double parse_double(std::string_view text) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
    if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
        throw FormatError("expected a number, got '" + std::string(text) + "'");
    }
    return out;
}

std::map<std::string, std::string> parse_key_values(std::string_view text) {
    std::map<std::string, std::string> out;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const std::size_t eq = body.find('=');
        if (eq == std::string::npos) {
            throw FormatError("line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const std::string key = trim(std::string_view(body).substr(0, eq));
        const std::string value = trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) throw FormatError("line " + std::to_string(lineno) + ": empty key");
        if (!out.emplace(key, value).second) {
            throw FormatError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
    }
    return out;
}

std::string write_key_values(const std::map<std::string, std::string>& entries) {
    std::string out;
    for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
    return out;
}

RunConfig::RunConfig() { resolve(); }

void RunConfig::set(const std::string& key, const std::string& value) {
    if (key == "seed") {
        seed = parse_u64(key, value);
    } else if (key == "data.d") {
        data.d = parse_int(key, value);
    } else if (key == "data.K") {
        data.num_classes = parse_int(key, value);
    } else if (key == "data.separation") {
        data.separation = parse_real(key, value);
    } else if (key == "data.sigma_audio") {
        data.sigma_audio = parse_real(key, value);
    } else if (key == "data.sigma_video") {
        data.sigma_video = parse_real(key, value);
    } else if (key == "data.generator_seed") {
        data.generator_seed = parse_u64(key, value);
    } else if (key == "data.N") {
        data.count = parse_int(key, value);
    } else if (key == "layout.audio") {
        layout = ModalityLayout(parse_shape(value), layout.video_shape());
    } else if (key == "layout.video") {
        layout = ModalityLayout(layout.audio_shape(), parse_shape(value));
    } else if (key == "schedule.T") {
        schedule.steps = parse_int(key, value);
    } else if (key == "schedule.beta_start") {
        schedule.beta_start = parse_real(key, value);
    } else if (key == "schedule.beta_end") {
        schedule.beta_end = parse_real(key, value);
    } else if (key == "model.dim") {
        model.model_dim = parse_int(key, value);
    } else if (key == "model.blocks") {
        model.num_blocks = parse_int(key, value);
    } else if (key == "model.heads") {
        model.num_heads = parse_int(key, value);
    } else if (key == "model.cond_dim") {
        model.cond_dim = parse_int(key, value);
    } else if (key == "model.ffn_mult") {
        model.ffn_mult = parse_int(key, value);
    } else if (key == "model.attention") {
        model.attention = parse_bool(key, value);
    } else if (key == "model.precision") {
        model.precision = value;
    } else if (key == "train.batch_size") {
        train.batch_size = parse_int(key, value);
    } else if (key == "train.learning_rate") {
        train.learning_rate = parse_real(key, value);
    } else if (key == "train.warmup_steps") {
        train.warmup_steps = parse_int(key, value);
    } else if (key == "train.total_steps") {
        train.total_steps = parse_int(key, value);
    } else if (key == "train.beta1") {
        train.beta1 = parse_real(key, value);
    } else if (key == "train.beta2") {
        train.beta2 = parse_real(key, value);
    } else if (key == "train.epsilon") {
        train.epsilon = parse_real(key, value);
    } else if (key == "train.clip_norm") {
        train.clip_norm = parse_real(key, value);
    } else if (key == "train.log_every") {
        train.log_every = parse_int(key, value);
    } else if (key == "train.checkpoint_every") {
        train.checkpoint_every = parse_int(key, value);
    } else if (key == "sampler.steps") {
        sampler.steps = parse_int(key, value);
    } else if (key == "sampler.guidance") {
        sampler.guidance = parse_real(key, value);
    } else if (key == "sampler.mode") {
        try {
            sampler.mode = parse_sampler_mode(value);
        } catch (const std::invalid_argument& e) {
            throw FormatError(std::string("config: ") + e.what());
        }
    } else {
        throw FormatError("config: unknown key '" + key + "'");
    }
}

void RunConfig::resolve() {
    model.layout = layout;
    model.num_classes = data.num_classes;
    train.seed = seed;
    sampler.seed = seed;
    try {
        if (data.d < 1 || data.num_classes < 1) throw std::invalid_argument("data.d and data.K must be >= 1");
        if (data.count < 0) throw std::invalid_argument("data.N must be >= 0");
        (void)schedule.build();
        model.validate();
        train.validate();
        sampler.validate(schedule.steps);
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("invalid config: ") + e.what());
    }
}

RunConfig RunConfig::parse(std::string_view text) {
    RunConfig cfg;
    for (const auto& [key, value] : parse_key_values(text)) {
        try {
            cfg.set(key, value);
        } catch (const std::invalid_argument& e) {
            throw FormatError("config: '" + key + "': " + e.what());
        }
    }
    cfg.resolve();
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    try {
        return parse(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::string RunConfig::to_text() const {
    std::string out;
    const auto line = [&](const char* key, const std::string& value) { out += std::string(key) + " = " + value + "\n"; };
    line("seed", std::to_string(seed));
    line("data.d", std::to_string(data.d));
    line("data.K", std::to_string(data.num_classes));
    line("data.separation", format_double(data.separation));
    line("data.sigma_audio", format_double(data.sigma_audio));
    line("data.sigma_video", format_double(data.sigma_video));
    line("data.generator_seed", std::to_string(data.generator_seed));
    line("data.N", std::to_string(data.count));
    line("layout.audio", shape_to_string(layout.audio_shape()));
    line("layout.video", shape_to_string(layout.video_shape()));
    line("schedule.T", std::to_string(schedule.steps));
    line("schedule.beta_start", format_double(schedule.beta_start));
    line("schedule.beta_end", format_double(schedule.beta_end));
    line("model.dim", std::to_string(model.model_dim));
    line("model.blocks", std::to_string(model.num_blocks));
    line("model.heads", std::to_string(model.num_heads));
    line("model.cond_dim", std::to_string(model.cond_dim));
    line("model.ffn_mult", std::to_string(model.ffn_mult));
    line("model.attention", model.attention ? "true" : "false");
    line("model.precision", model.precision);
    line("train.batch_size", std::to_string(train.batch_size));
    line("train.learning_rate", format_double(train.learning_rate));
    line("train.warmup_steps", std::to_string(train.warmup_steps));
    line("train.total_steps", std::to_string(train.total_steps));
    line("train.beta1", format_double(train.beta1));
    line("train.beta2", format_double(train.beta2));
    line("train.epsilon", format_double(train.epsilon));
    line("train.clip_norm", format_double(train.clip_norm));
    line("train.log_every", std::to_string(train.log_every));
    line("train.checkpoint_every", std::to_string(train.checkpoint_every));
    line("sampler.steps", std::to_string(sampler.steps));
    line("sampler.guidance", format_double(sampler.guidance));
    line("sampler.mode", std::string(sampler_mode_name(sampler.mode)));
    return out;
}

std::uint64_t RunConfig::digest() const { return fnv1a64(to_text()); }

GeneratorSpec RunConfig::make_generator() const {
    return avdiff::make_generator(data.d, layout, data.num_classes, data.separation, data.sigma_audio,
                                  data.sigma_video, data.generator_seed);
}

void TensorContainer::validate() const {
    const auto n = static_cast<Eigen::Index>(classes.size());
    if (audio.rows() != n || video.rows() != n) throw ShapeError("container: record counts differ");
    if (audio.cols() != layout.audio_flat_dim() || video.cols() != layout.video_flat_dim()) {
        throw ShapeError("container: latent sizes do not match the layout");
    }
    if (num_classes < 1) throw std::invalid_argument("container: K must be >= 1");
    for (int c : classes) {
        if (c != kNullClass && (c < 0 || c >= num_classes)) {
            throw std::out_of_range("container: class id outside [0, K)");
        }
    }
}

std::string encode_container(const TensorContainer& c) {
    c.validate();
    std::string out = "UDIF1\n";
    const auto& a = c.layout.audio_shape();
    const auto& v = c.layout.video_shape();
    out += std::to_string(c.count());
    for (int x : a) out += " " + std::to_string(x);
    for (int x : v) out += " " + std::to_string(x);
    out += " " + std::to_string(c.num_classes) + " " + digest_hex(c.layout.digest()) + "\n";
    const std::size_t record = 4 * static_cast<std::size_t>(c.audio.cols() + c.video.cols() + 1);
    out.reserve(out.size() + record * static_cast<std::size_t>(c.count()));
    for (int i = 0; i < c.count(); ++i) {
        for (Eigen::Index j = 0; j < c.audio.cols(); ++j) put_le(out, static_cast<float>(c.audio(i, j)));
        for (Eigen::Index j = 0; j < c.video.cols(); ++j) put_le(out, static_cast<float>(c.video(i, j)));
        put_le(out, static_cast<std::int32_t>(c.classes[static_cast<std::size_t>(i)]));
    }
    return out;
}

TensorContainer decode_container(std::string_view bytes) {
    const std::size_t nl1 = bytes.find('\n');
    if (nl1 == std::string_view::npos || bytes.substr(0, nl1) != "UDIF1") {
        throw FormatError("container: bad magic (expected UDIF1)");
    }
    const std::size_t nl2 = bytes.find('\n', nl1 + 1);
    if (nl2 == std::string_view::npos) throw FormatError("container: truncated header");
    std::istringstream header{std::string(bytes.substr(nl1 + 1, nl2 - nl1 - 1))};
    long long count = 0;
    ModalityLayout::Shape a{};
    ModalityLayout::Shape v{};
    int k = 0;
    std::string digest;
    header >> count;
    for (int& x : a) header >> x;
    for (int& x : v) header >> x;
    header >> k >> digest;
    std::string extra;
    if (!header || (header >> extra) || count < 0) throw FormatError("container: malformed header");

    TensorContainer c;
    try {
        c.layout = ModalityLayout(a, v);
    } catch (const ShapeError& e) {
        throw FormatError(std::string("container: ") + e.what());
    }
    if (parse_digest_hex(digest) != c.layout.digest()) {
        throw FormatError("container: layout digest does not match header shapes");
    }
    if (k < 1) throw FormatError("container: K must be >= 1");
    c.num_classes = k;
    const int na = c.layout.audio_flat_dim();
    const int nv = c.layout.video_flat_dim();
    const std::size_t record = 4 * static_cast<std::size_t>(na + nv + 1);
    const std::size_t payload = bytes.size() - (nl2 + 1);
    if (payload != record * static_cast<std::size_t>(count)) {
        throw FormatError("container: payload is " + std::to_string(payload) + " bytes, header implies " +
                          std::to_string(record * static_cast<std::size_t>(count)));
    }
    c.audio.resize(count, na);
    c.video.resize(count, nv);
    c.classes.resize(static_cast<std::size_t>(count));
    const char* p = bytes.data() + nl2 + 1;
    for (long long i = 0; i < count; ++i) {
        for (int j = 0; j < na; ++j, p += 4) c.audio(i, j) = get_le<float>(p);
        for (int j = 0; j < nv; ++j, p += 4) c.video(i, j) = get_le<float>(p);
        c.classes[static_cast<std::size_t>(i)] = get_le<std::int32_t>(p);
        p += 4;
    }
    try {
        c.validate();
    } catch (const std::exception& e) {
        throw FormatError(std::string("container: ") + e.what());
    }
    return c;
}

void write_container(const std::filesystem::path& path, const TensorContainer& c) {
    write_file(path, encode_container(c));
}

TensorContainer read_container(const std::filesystem::path& path) {
    try {
        return decode_container(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::filesystem::path meta_path(const std::filesystem::path& path) { return path.string() + ".meta"; }

void write_meta(const std::filesystem::path& path, const std::map<std::string, std::string>& meta) {
    write_file(meta_path(path), write_key_values(meta));
}

std::map<std::string, std::string> read_meta(const std::filesystem::path& path) {
    return parse_key_values(read_file(meta_path(path)));
}

std::string encode_generator(const GeneratorSpec& spec) {
    spec.validate();
    std::string out = "UDGEN1\n";
    out += "d " + std::to_string(spec.d) + "\n";
    out += "K " + std::to_string(spec.num_classes) + "\n";
    out += "audio " + shape_to_string(spec.layout.audio_shape()) + "\n";
    out += "video " + shape_to_string(spec.layout.video_shape()) + "\n";
    out += "sigma " + hexfloat(spec.sigma_audio) + " " + hexfloat(spec.sigma_video) + "\n";
    append_hex_matrix(out, "means", spec.class_means);
    append_hex_matrix(out, "w_audio", spec.w_audio);
    append_hex_matrix(out, "w_video", spec.w_video);
    out += "digest " + digest_hex(spec.digest()) + "\n";
    return out;
}

GeneratorSpec decode_generator(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string tag;
    std::string a;
    std::string b;
    GeneratorSpec spec;
    const auto expect = [&](const char* name) {
        if (!(in >> tag) || tag != name) throw FormatError(std::string("generator file: expected '") + name + "'");
    };
    expect("UDGEN1");
    expect("d");
    in >> spec.d;
    expect("K");
    in >> spec.num_classes;
    expect("audio");
    in >> a;
    expect("video");
    in >> b;
    expect("sigma");
    std::string sa;
    std::string sv;
    in >> sa >> sv;
    if (!in) throw FormatError("generator file: truncated header");
    try {
        spec.layout = ModalityLayout(parse_shape(a), parse_shape(b));
    } catch (const ShapeError& e) {
        throw FormatError(std::string("generator file: ") + e.what());
    }
    spec.sigma_audio = parse_hexfloat(sa);
    spec.sigma_video = parse_hexfloat(sv);
    spec.class_means = read_hex_matrix(in, "means");
    spec.w_audio = read_hex_matrix(in, "w_audio");
    spec.w_video = read_hex_matrix(in, "w_video");
    expect("digest");
    std::string digest;
    in >> digest;
    try {
        spec.validate();
    } catch (const std::exception& e) {
        throw FormatError(std::string("generator file: ") + e.what());
    }
    if (parse_digest_hex(digest) != spec.digest()) throw FormatError("generator file: digest mismatch");
    return spec;
}

std::filesystem::path generator_path(const std::filesystem::path& path) { return path.string() + ".gen"; }

void write_generator(const std::filesystem::path& path, const GeneratorSpec& spec) {
    write_file(generator_path(path), encode_generator(spec));
}

GeneratorSpec read_generator(const std::filesystem::path& path) {
    return decode_generator(read_file(generator_path(path)));
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw std::runtime_error("cannot write '" + path.string() + "': " + ec.message());
}

}  // namespace avdiff
