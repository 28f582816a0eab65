#include "avdiff/checkpoint.hpp"

#include "avdiff/digest.hpp"

#include <cstring>
#include <sstream>

namespace avdiff {

namespace {

constexpr std::string_view kMagic = "UDCK";

std::string tensor_key(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "ckpt.tensor.%04zu", i);
    return buf;
}

template <typename M>
void append_f64(std::string& out, const M& m) {
    const std::size_t bytes = sizeof(double) * static_cast<std::size_t>(m.size());
    const std::size_t start = out.size();
    out.resize(start + bytes);
    if (bytes > 0) std::memcpy(out.data() + start, m.data(), bytes);
}

template <typename M>
void read_f64(const char*& p, const char* end, M& m) {
    const std::size_t bytes = sizeof(double) * static_cast<std::size_t>(m.size());
    if (static_cast<std::size_t>(end - p) < bytes) throw FormatError("checkpoint: truncated payload");
    if (bytes > 0) std::memcpy(m.data(), p, bytes);
    p += bytes;
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    std::map<std::string, std::string> header;
    for (const auto& [k, v] : parse_key_values(ckpt.config.to_text())) header[k] = v;
    header["ckpt.step"] = std::to_string(ckpt.state.step);
    header["ckpt.optimizer_step"] = std::to_string(ckpt.state.optimizer.step);
    header["ckpt.generator_digest"] = digest_hex(ckpt.generator_digest);
    header["ckpt.config_digest"] = digest_hex(ckpt.config.digest());
    header["ckpt.param_digest"] = digest_hex(parameter_digest(ckpt.state.params));
    std::size_t i = 0;
    ckpt.state.params.for_each([&](const std::string& name, const auto& t) {
        header[tensor_key(i++)] = name + " " + std::to_string(t.rows()) + " " + std::to_string(t.cols());
    });
    const std::string text = write_key_values(header);

    std::string out = std::string(kMagic) + " " + std::to_string(kCheckpointVersion) + "\n";
    out += std::to_string(text.size()) + "\n";
    out += text;
    for (const DenoiserParameters* set : {&ckpt.state.params, &ckpt.state.optimizer.m, &ckpt.state.optimizer.v}) {
        std::size_t n = 0;
        set->for_each([&](const std::string&, const auto& t) {
            append_f64(out, t);
            ++n;
        });
        if (n != i) throw ShapeError("checkpoint: optimizer state does not match parameters");
    }
    const std::uint64_t digest = fnv1a64(std::string_view(out));
    char buf[8];
    std::memcpy(buf, &digest, 8);
    out.append(buf, 8);
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    const std::size_t nl1 = bytes.find('\n');
    if (nl1 == std::string_view::npos || bytes.substr(0, kMagic.size() + 1) != std::string(kMagic) + " ") {
        throw FormatError("checkpoint: bad magic");
    }
    const std::string version(bytes.substr(kMagic.size() + 1, nl1 - kMagic.size() - 1));
    if (version != std::to_string(kCheckpointVersion)) {
        throw FormatError("checkpoint: unsupported version '" + version + "'");
    }
    if (bytes.size() < nl1 + 1 + 8) throw FormatError("checkpoint: truncated file");
    const std::string_view body = bytes.substr(0, bytes.size() - 8);
    std::uint64_t stored = 0;
    std::memcpy(&stored, bytes.data() + body.size(), 8);
    if (fnv1a64(body) != stored) throw FormatError("checkpoint: content digest mismatch (corrupt or truncated)");

    const std::size_t nl2 = body.find('\n', nl1 + 1);
    if (nl2 == std::string_view::npos) throw FormatError("checkpoint: truncated header");
    std::size_t header_len = 0;
    try {
        header_len = static_cast<std::size_t>(std::stoull(std::string(body.substr(nl1 + 1, nl2 - nl1 - 1))));
    } catch (const std::exception&) {
        throw FormatError("checkpoint: malformed header length");
    }
    if (body.size() - (nl2 + 1) < header_len) throw FormatError("checkpoint: truncated header");
    const auto header = parse_key_values(body.substr(nl2 + 1, header_len));

    Checkpoint ckpt;
    const auto get = [&](const std::string& key) -> const std::string& {
        const auto it = header.find(key);
        if (it == header.end()) throw FormatError("checkpoint: missing '" + key + "'");
        return it->second;
    };
    try {
        for (const auto& [k, v] : header) {
            if (k.rfind("ckpt.", 0) != 0) ckpt.config.set(k, v);
        }
        ckpt.config.resolve();
        ckpt.state.step = std::stoll(get("ckpt.step"));
        ckpt.state.optimizer.step = std::stoll(get("ckpt.optimizer_step"));
    } catch (const FormatError&) {
        throw;
    } catch (const std::exception& e) {
        throw FormatError(std::string("checkpoint: bad header: ") + e.what());
    }
    ckpt.generator_digest = parse_digest_hex(get("ckpt.generator_digest"));
    if (parse_digest_hex(get("ckpt.config_digest")) != ckpt.config.digest()) {
        throw FormatError("checkpoint: config digest mismatch");
    }

    ckpt.state.params = init_params(ckpt.config.model, 0).zeros_like();
    std::size_t i = 0;
    ckpt.state.params.for_each([&](const std::string& name, const auto& t) {
        const std::string expected = name + " " + std::to_string(t.rows()) + " " + std::to_string(t.cols());
        if (get(tensor_key(i++)) != expected) {
            throw FormatError("checkpoint: tensor table does not match config at '" + name + "'");
        }
    });
    if (header.count(tensor_key(i)) != 0) throw FormatError("checkpoint: extra tensors in table");
    ckpt.state.optimizer.m = ckpt.state.params.zeros_like();
    ckpt.state.optimizer.v = ckpt.state.params.zeros_like();

    const char* p = body.data() + nl2 + 1 + header_len;
    const char* end = body.data() + body.size();
    for (DenoiserParameters* set : {&ckpt.state.params, &ckpt.state.optimizer.m, &ckpt.state.optimizer.v}) {
        set->for_each([&](const std::string&, auto& t) { read_f64(p, end, t); });
    }
    if (p != end) throw FormatError("checkpoint: trailing bytes after payload");
    if (parse_digest_hex(get("ckpt.param_digest")) != parameter_digest(ckpt.state.params)) {
        throw FormatError("checkpoint: parameter digest mismatch");
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    try {
        return decode_checkpoint(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void require_layout(const Checkpoint& ckpt, const ModalityLayout& layout) {
    if (!(ckpt.config.layout == layout)) {
        throw ConfigMismatchError("checkpoint layout " + ckpt.config.layout.to_string() +
                                  " does not match " + layout.to_string());
    }
}

}  // namespace avdiff
