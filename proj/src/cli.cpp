#include "avdiff/cli.hpp"

#include "avdiff/digest.hpp"
#include "avdiff/metrics.hpp"
#include "avdiff/sampler.hpp"
#include "avdiff/svg_plot.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

namespace avdiff {

namespace {

std::string get_or(const std::map<std::string, std::string>& m, const std::string& key, const std::string& dflt = "") {
    const auto it = m.find(key);
    return it == m.end() ? dflt : it->second;
}

std::map<std::string, std::string> read_meta_if_present(const std::filesystem::path& path) {
    if (!std::filesystem::exists(meta_path(path))) return {};
    return read_meta(path);
}

Mat prior_samples(int n, int dim, std::uint64_t seed) {
    Rng rng = Rng(seed).split("prior");
    return rng.normal_matrix(n, dim);
}

std::vector<std::size_t> shuffled_indices(int n, std::uint64_t seed) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng = Rng(seed).split("shuffle");
    // Fisher-Yates with the library stream so results are platform-independent.
    for (int i = n - 1; i > 0; --i) {
        const int j = rng.uniform_int(0, i);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    return idx;
}

}  // namespace

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const UsageError*>(&e) != nullptr) return kExitUsage;
    if (dynamic_cast<const NumericalError*>(&e) != nullptr) return kExitNumerical;
    return kExitData;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        while (true) {
            const std::size_t comma = line.find(',', start);
            cells.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (!rows.empty() && cells.size() != rows.front().size()) {
            throw FormatError("csv: row " + std::to_string(rows.size() + 1) + " has " + std::to_string(cells.size()) +
                              " cells, header has " + std::to_string(rows.front().size()));
        }
        rows.push_back(std::move(cells));
    }
    return rows;
}

std::string format_train_log(const TrainResult& result, std::uint64_t config_digest) {
    const std::string digest = digest_hex(config_digest);
    std::string out = std::string(kTrainLogColumns) + "\n";
    for (int k = 0; k < kNumTasks; ++k) {
        out += "0," + std::string(task_name(task_from_code(k))) + "," +
               format_double(result.baseline[static_cast<std::size_t>(k)]) + ",0," + digest + "\n";
    }
    for (const TrainLogRow& row : result.log) {
        out += std::to_string(row.step) + "," + std::string(task_name(row.task)) + "," + format_double(row.loss) +
               "," + format_double(row.learning_rate) + "," + digest + "\n";
    }
    return out;
}

void cmd_gen_data(const GenDataOptions& opt, std::ostream& log) {
    RunConfig cfg = RunConfig::load(opt.config);
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.count) {
        if (*opt.count < 0) throw UsageError("gen-data: --count must be >= 0");
        cfg.data.count = *opt.count;
    }
    cfg.resolve();
    const GeneratorSpec spec = cfg.make_generator();

    TensorContainer c;
    c.layout = cfg.layout;
    c.num_classes = cfg.data.num_classes;
    if (cfg.data.count > 0) {
        Rng rng = Rng(cfg.seed).split("gen-data");
        PairSamples s = sample_pairs(spec, cfg.data.count, rng);
        c.audio = std::move(s.audio);
        c.video = std::move(s.video);
        c.classes = std::move(s.classes);
    } else {
        c.audio.resize(0, cfg.layout.audio_flat_dim());
        c.video.resize(0, cfg.layout.video_flat_dim());
    }
    write_container(opt.out, c);
    write_generator(opt.out, spec);
    write_meta(opt.out, {{"kind", "data"},
                         {"config_digest", digest_hex(cfg.digest())},
                         {"generator_digest", digest_hex(spec.digest())},
                         {"layout_digest", digest_hex(cfg.layout.digest())},
                         {"seed", std::to_string(cfg.seed)},
                         {"count", std::to_string(c.count())}});
    log << "wrote " << c.count() << " pairs to " << opt.out.string() << " (generator " << digest_hex(spec.digest())
        << ")\n";
}

void cmd_train(const TrainOptions& opt, std::ostream& log) {
    const RunConfig cfg = RunConfig::load(opt.config);
    const NoiseSchedule schedule = cfg.schedule.build();

    std::unique_ptr<DataSource> data;
    std::uint64_t generator_digest = 0;
    if (opt.data) {
        TensorContainer c = read_container(*opt.data);
        if (!(c.layout == cfg.layout)) {
            throw ConfigMismatchError("train: dataset layout " + c.layout.to_string() + " does not match config " +
                                      cfg.layout.to_string());
        }
        if (c.num_classes != cfg.data.num_classes) {
            throw ConfigMismatchError("train: dataset K does not match config data.K");
        }
        if (std::find(c.classes.begin(), c.classes.end(), kNullClass) != c.classes.end()) {
            throw FormatError("train: dataset contains unlabeled records");
        }
        const auto meta = read_meta_if_present(*opt.data);
        const std::string g = get_or(meta, "generator_digest");
        if (!g.empty()) generator_digest = parse_digest_hex(g);
        data = std::make_unique<DatasetSource>(c.layout, c.num_classes, std::move(c.audio), std::move(c.video),
                                               std::move(c.classes));
    } else {
        GeneratorSpec spec = cfg.make_generator();
        generator_digest = spec.digest();
        data = std::make_unique<GeneratorSource>(std::move(spec));
    }

    const auto make_ckpt = [&](const TrainState& state) { return Checkpoint{cfg, state, generator_digest}; };
    TrainHooks hooks;
    hooks.checkpoint = [&](const TrainState& state) { save_checkpoint(opt.out, make_ckpt(state)); };
    hooks.dump_on_failure = [&](const TrainState& state) {
        const std::filesystem::path dump = opt.out.string() + ".failed";
        save_checkpoint(dump, make_ckpt(state));
        log << "numerical failure at step " << state.step + 1 << "; state dumped to " << dump.string() << "\n";
    };

    const TrainResult result = train(cfg.train, cfg.model, schedule, *data, init_train_state(cfg.model, cfg.train),
                                     hooks);
    const std::filesystem::path log_path = opt.log ? *opt.log : std::filesystem::path(opt.out.string() + ".log.csv");
    write_file(log_path, format_train_log(result, cfg.digest()));
    log << "trained " << result.state.step << " steps; checkpoint " << opt.out.string() << " (params "
        << digest_hex(parameter_digest(result.state.params)) << "), log " << log_path.string() << "\n";
}

void cmd_sample(const SampleOptions& opt, std::ostream& log) {
    const Checkpoint ckpt = load_checkpoint(opt.checkpoint);
    const RunConfig& cfg = ckpt.config;
    const NoiseSchedule schedule = cfg.schedule.build();

    TaskId task;
    try {
        task = parse_task(opt.task);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    SamplerConfig sc = cfg.sampler;
    if (opt.steps) sc.steps = *opt.steps;
    if (opt.guidance) sc.guidance = *opt.guidance;
    if (opt.seed) sc.seed = *opt.seed;
    if (opt.mode) {
        try {
            sc.mode = parse_sampler_mode(*opt.mode);
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }
    try {
        sc.validate(schedule.steps());
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (opt.class_id && (*opt.class_id < 0 || *opt.class_id >= cfg.data.num_classes)) {
        throw UsageError("sample: --class must lie in [0, " + std::to_string(cfg.data.num_classes) + ")");
    }

    GenerateRequest request;
    request.task = task;
    std::string condition_digest;
    if (task != TaskId::T2AV) {
        if (!opt.condition) {
            throw UsageError(std::string("sample: task ") + std::string(task_name(task)) +
                             " requires --condition with the clean modality");
        }
        const std::string bytes = read_file(*opt.condition);
        const TensorContainer cond = decode_container(bytes);
        require_layout(ckpt, cond.layout);
        if (cond.count() == 0) throw FormatError("sample: conditioning file has no records");
        condition_digest = digest_hex(fnv1a64(bytes));
        request.clean = task == TaskId::A2V ? cond.audio : cond.video;
        const int n = opt.count ? *opt.count : cond.count();
        if (cond.count() != 1 && cond.count() != n) {
            throw UsageError("sample: --count must equal the conditioning record count (or use a single record)");
        }
        request.count = n;
    } else {
        if (opt.condition) throw UsageError("sample: t2av takes no conditioning file");
        request.count = opt.count ? *opt.count : 1000;
    }
    if (request.count < 1) throw UsageError("sample: --count must be >= 1");
    const int class_id = opt.class_id ? *opt.class_id : kNullClass;
    request.classes.assign(static_cast<std::size_t>(request.count), class_id);

    const DenoiserModel model(ckpt.state.params, cfg.model, schedule.steps());
    GenerateResult r = generate(model, schedule, request, sc);

    TensorContainer out;
    out.layout = cfg.layout;
    out.num_classes = cfg.data.num_classes;
    out.audio = std::move(r.audio);
    out.video = std::move(r.video);
    out.classes = request.classes;
    write_container(opt.out, out);
    const std::string param_digest = digest_hex(parameter_digest(ckpt.state.params));
    std::map<std::string, std::string> meta{{"kind", "samples"},
                                            {"task", std::string(task_name(task))},
                                            {"class", opt.class_id ? std::to_string(*opt.class_id) : "null"},
                                            {"guidance", format_double(sc.guidance)},
                                            {"steps", std::to_string(sc.steps)},
                                            {"mode", std::string(sampler_mode_name(sc.mode))},
                                            {"seed", std::to_string(sc.seed)},
                                            {"count", std::to_string(request.count)},
                                            {"config_digest", digest_hex(cfg.digest())},
                                            {"param_digest", param_digest},
                                            {"generator_digest", digest_hex(ckpt.generator_digest)},
                                            {"layout_digest", digest_hex(cfg.layout.digest())}};
    if (!condition_digest.empty()) meta["condition_digest"] = condition_digest;
    write_meta(opt.out, meta);
    log << "wrote " << request.count << " " << task_name(task) << " samples to " << opt.out.string() << " ("
        << r.denoiser_calls << " denoiser calls, params " << param_digest << ")\n";
}

void cmd_eval(const EvalOptions& opt, std::ostream& log) {
    if (opt.generated.empty()) throw UsageError("eval: at least one --generated file is required");
    std::vector<std::string> metrics = opt.metrics.empty() ? kEvalMetrics : opt.metrics;
    for (const std::string& m : metrics) {
        if (std::find(kEvalMetrics.begin(), kEvalMetrics.end(), m) == kEvalMetrics.end()) {
            throw UsageError("eval: unknown metric '" + m + "' (expected frechet, kl, is, alignment)");
        }
    }
    const auto wants = [&](const char* m) { return std::find(metrics.begin(), metrics.end(), m) != metrics.end(); };

    GeneratorSpec spec;
    if (opt.generator) {
        spec = decode_generator(read_file(*opt.generator));
    } else if (opt.reference && std::filesystem::exists(generator_path(*opt.reference))) {
        spec = read_generator(*opt.reference);
    } else {
        throw UsageError("eval: need --generator or a reference dataset with a .gen sidecar");
    }
    const std::uint64_t spec_digest = spec.digest();
    const ToyOracle oracle(spec);

    GaussianFit ref_audio;
    GaussianFit ref_video;
    if (opt.reference) {
        const TensorContainer ref = read_container(*opt.reference);
        if (!(ref.layout == spec.layout)) {
            throw ConfigMismatchError("eval: reference layout does not match the generator");
        }
        const auto ref_meta = read_meta_if_present(*opt.reference);
        const std::string g = get_or(ref_meta, "generator_digest");
        if (!opt.allow_mismatch && g != digest_hex(spec_digest)) {
            throw ConfigMismatchError("eval: reference generator digest '" + g + "' does not match " +
                                      digest_hex(spec_digest) + " (use --allow-mismatch to override)");
        }
        ref_audio = gaussian_fit(ref.audio);
        ref_video = gaussian_fit(ref.video);
    } else {
        ref_audio = gaussian_fit(marginal_moments(spec, Modality::Audio));
        ref_video = gaussian_fit(marginal_moments(spec, Modality::Video));
    }

    std::set<std::string> param_digests;
    std::string out = std::string(kEvalColumns) + "\n";
    for (const std::filesystem::path& path : opt.generated) {
        const TensorContainer gen = read_container(path);
        if (!(gen.layout == spec.layout)) {
            throw ConfigMismatchError("eval: " + path.string() + " layout " + gen.layout.to_string() +
                                      " is incompatible with " + spec.layout.to_string());
        }
        const auto meta = read_meta_if_present(path);
        const std::string g = get_or(meta, "generator_digest");
        if (!opt.allow_mismatch && g != digest_hex(spec_digest)) {
            throw ConfigMismatchError("eval: " + path.string() + " generator digest '" + g + "' does not match " +
                                      digest_hex(spec_digest) + " (use --allow-mismatch to override)");
        }
        const std::string pd = get_or(meta, "param_digest");
        if (!pd.empty()) param_digests.insert(pd);

        const std::string config_digest = get_or(meta, "config_digest");
        const std::string task = get_or(meta, "task", get_or(meta, "kind"));
        const std::string guidance = get_or(meta, "guidance");
        const long long n = gen.count();
        const auto row = [&](const std::string& metric, double value) {
            out += metric + "," + format_double(value) + "," + std::to_string(n) + "," + config_digest + "," + task +
                   "," + guidance + "\n";
        };
        if (n < 2) throw FormatError("eval: " + path.string() + " needs at least 2 records");

        const GaussianFit fa = gaussian_fit(gen.audio);
        const GaussianFit fv = gaussian_fit(gen.video);
        if (wants("frechet")) {
            bool warn_a = false;
            bool warn_v = false;
            row("frechet_audio", frechet_distance(fa, ref_audio, &warn_a));
            row("frechet_video", frechet_distance(fv, ref_video, &warn_v));
            if (warn_a || warn_v) log << "warning: sqrtm clipped negative eigenvalues for " << path.string() << "\n";
            const std::uint64_t prior_seed = fnv1a64(path.filename().string());
            row("frechet_prior_audio",
                frechet_distance(gaussian_fit(prior_samples(static_cast<int>(n), gen.layout.audio_flat_dim(),
                                                            prior_seed)),
                                 ref_audio));
            row("frechet_prior_video",
                frechet_distance(gaussian_fit(prior_samples(static_cast<int>(n), gen.layout.video_flat_dim(),
                                                            prior_seed + 1)),
                                 ref_video));
        }
        if (wants("kl")) {
            bool reg = false;
            row("kl_audio", gaussian_kl(fa, ref_audio, &reg));
            row("kl_video", gaussian_kl(fv, ref_video, &reg));
            if (reg) log << "warning: KL covariance regularized for " << path.string() << "\n";
        }
        if (wants("is")) {
            Mat post(n, spec.num_classes);
            for (long long i = 0; i < n; ++i) {
                const Vec a = gen.audio.row(i).transpose();
                const Vec v = gen.video.row(i).transpose();
                post.row(i) = oracle.posterior(&a, &v).transpose();
            }
            row("is_analog", inception_score_analog(post));
        }
        if (wants("alignment")) {
            const AlignmentResult joint = alignment_score(gen.audio, gen.video, spec);
            const auto idx = shuffled_indices(static_cast<int>(n), fnv1a64(path.filename().string()));
            Mat shuffled(gen.video.rows(), gen.video.cols());
            for (long long i = 0; i < n; ++i) shuffled.row(i) = gen.video.row(static_cast<Eigen::Index>(idx[i]));
            const AlignmentResult indep = alignment_score(gen.audio, shuffled, spec);
            row("alignment", joint.score);
            row("alignment_shuffled", indep.score);
            if (joint.skipped + indep.skipped > 0) {
                log << "alignment: skipped " << joint.skipped + indep.skipped << " degenerate pairs\n";
            }
        }
    }
    if (param_digests.size() > 1 && !opt.allow_mismatch) {
        throw ConfigMismatchError("eval: generated files come from different parameter sets");
    }
    write_file(opt.out, out);
    log << "wrote eval for " << opt.generated.size() << " file(s) to " << opt.out.string();
    if (param_digests.size() == 1) log << " (shared params " << *param_digests.begin() << ")";
    log << "\n";
}

void cmd_plot(const PlotOptions& opt, std::ostream& log) {
    const auto rows = parse_csv(read_file(opt.input));
    PlotSpec spec;
    std::vector<PlotSeries> series;
    const auto number = [&](const std::string& cell, std::size_t line) {
        try {
            return parse_double(cell);
        } catch (const FormatError&) {
            throw FormatError("plot: row " + std::to_string(line + 1) + ": bad number '" + cell + "'");
        }
    };
    const auto series_for = [&](const std::string& name) -> PlotSeries& {
        for (PlotSeries& s : series) {
            if (s.name == name) return s;
        }
        series.push_back(PlotSeries{name, {}, {}});
        return series.back();
    };

    if (rows.empty()) {
        spec.title = "empty input";
    } else if (rows.front().size() >= 3 && rows.front()[0] == "step" && rows.front()[2] == "loss") {
        spec = PlotSpec{"training loss", "step", "loss", true};
        for (std::size_t i = 1; i < rows.size(); ++i) {
            PlotSeries& s = series_for(rows[i][1]);
            s.x.push_back(number(rows[i][0], i));
            s.y.push_back(number(rows[i][2], i));
        }
    } else if (rows.front().size() >= 6 && rows.front()[0] == "metric" && rows.front()[5] == "guidance") {
        spec = PlotSpec{"metric vs guidance", "guidance scale w", "value", false};
        for (std::size_t i = 1; i < rows.size(); ++i) {
            if (rows[i][5].empty()) continue;
            PlotSeries& s = series_for(rows[i][0] + " (" + rows[i][4] + ")");
            s.x.push_back(number(rows[i][5], i));
            s.y.push_back(number(rows[i][1], i));
        }
        for (PlotSeries& s : series) {
            std::vector<std::size_t> order(s.x.size());
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.x[a] < s.x[b]; });
            PlotSeries sorted{s.name, {}, {}};
            for (std::size_t j : order) {
                sorted.x.push_back(s.x[j]);
                sorted.y.push_back(s.y[j]);
            }
            s = std::move(sorted);
        }
    } else {
        throw FormatError("plot: unrecognized CSV header (expected a training log or eval CSV)");
    }
    if (spec.log_y) {
        for (const PlotSeries& s : series) {
            if (std::any_of(s.y.begin(), s.y.end(), [](double y) { return !(y > 0.0); })) {
                spec.log_y = false;
                break;
            }
        }
    }
    try {
        write_file(opt.out, render_svg(spec, series));
    } catch (const std::invalid_argument& e) {
        throw FormatError(e.what());
    }
    std::size_t points = 0;
    for (const PlotSeries& s : series) points += s.x.size();
    log << "wrote " << opt.out.string() << " (" << series.size() << " series, " << points << " points)\n";
}

}  // namespace avdiff
