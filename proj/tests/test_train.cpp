#include "avdiff/checkpoint.hpp"
#include "avdiff/train.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>

using namespace avdiff;

namespace {

constexpr const char* kTinyConfig = R"(
seed = 4
data.d = 2
data.K = 3
layout.audio = 1,4,2,1
layout.video = 1,2,2,2
schedule.T = 50
schedule.beta_start = 1e-3
schedule.beta_end = 0.05
model.dim = 8
model.blocks = 1
model.heads = 2
model.cond_dim = 8
model.ffn_mult = 2
train.batch_size = 4
train.learning_rate = 1e-3
train.warmup_steps = 5
train.total_steps = 12
train.log_every = 5
sampler.steps = 10
)";

RunConfig tiny() { return RunConfig::parse(kTinyConfig); }

std::vector<double> flatten(const DenoiserParameters& p) {
    std::vector<double> out;
    p.for_each([&](const std::string&, const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); });
    return out;
}

DenoiserParameters filled(const DenoiserParameters& like, double value) {
    DenoiserParameters out = like.zeros_like();
    out.for_each([&](const std::string&, auto& m) { m.setConstant(value); });
    return out;
}

TrainResult run(const RunConfig& cfg, const TrainHooks& hooks = {}) {
    const GeneratorSource data(cfg.make_generator());
    return train(cfg.train, cfg.model, cfg.schedule.build(), data, init_train_state(cfg.model, cfg.train), hooks);
}

Checkpoint to_checkpoint(const RunConfig& cfg, TrainState state) {
    return Checkpoint{cfg, std::move(state), cfg.make_generator().digest()};
}

class NanSource : public DataSource {
public:
    explicit NanSource(ModalityLayout l) : layout_(std::move(l)) {}
    const ModalityLayout& layout() const override { return layout_; }
    int num_classes() const override { return 3; }
    void draw(Rng&, Vec& audio, Vec& video, int& class_id) const override {
        audio = Vec::Constant(layout_.audio_flat_dim(), std::numeric_limits<double>::quiet_NaN());
        video = Vec::Zero(layout_.video_flat_dim());
        class_id = 0;
    }

private:
    ModalityLayout layout_;
};

}  // namespace

TEST_CASE("learning rate warmup") {
    TrainConfig cfg;
    CHECK(learning_rate_at(cfg, 500) == doctest::Approx(0.5e-4).epsilon(1e-14));
    CHECK(learning_rate_at(cfg, 1) == doctest::Approx(1e-7).epsilon(1e-14));
    CHECK(learning_rate_at(cfg, 1000) == 1e-4);
    CHECK(learning_rate_at(cfg, 15000) == 1e-4);
    cfg.warmup_steps = 0;
    CHECK(learning_rate_at(cfg, 1) == 1e-4);
    CHECK_THROWS_AS(learning_rate_at(cfg, 0), std::out_of_range);
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.warmup_steps = 30000;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = TrainConfig{};
    cfg.beta2 = 1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("optimizer step") {
    const RunConfig cfg = tiny();
    const DenoiserParameters init = init_params(cfg.model, 1);
    TrainConfig hyper = cfg.train;
    hyper.warmup_steps = 0;

    SUBCASE("zero gradients leave parameters unchanged") {
        DenoiserParameters p = init;
        AdamState st = init_adam(p);
        const double lr = optimizer_step(p, init.zeros_like(), st, hyper);
        CHECK(lr == hyper.learning_rate);
        CHECK(st.step == 1);
        CHECK(flatten(p) == flatten(init));
        for (double v : flatten(st.m)) CHECK(v == 0.0);
    }
    SUBCASE("moments decay under zero gradients") {
        DenoiserParameters p = init;
        AdamState st = init_adam(p);
        optimizer_step(p, filled(init, 0.2), st, hyper);
        const std::vector<double> m1 = flatten(st.m);
        const std::vector<double> v1 = flatten(st.v);
        optimizer_step(p, init.zeros_like(), st, hyper);
        const std::vector<double> m2 = flatten(st.m);
        const std::vector<double> v2 = flatten(st.v);
        for (std::size_t i = 0; i < m1.size(); ++i) {
            CHECK(m2[i] == doctest::Approx(0.9 * m1[i]).epsilon(1e-14));
            CHECK(v2[i] == doctest::Approx(0.999 * v1[i]).epsilon(1e-14));
        }
    }
    SUBCASE("constant gradient moves each coordinate by the learning rate") {
        DenoiserParameters p = init;
        AdamState st = init_adam(p);
        std::vector<double> before = flatten(p);
        for (int step = 0; step < 200; ++step) {
            before = flatten(p);
            optimizer_step(p, filled(init, -0.3), st, hyper);
        }
        const std::vector<double> after = flatten(p);
        for (std::size_t i = 0; i < after.size(); ++i) {
            CHECK(std::abs((after[i] - before[i]) - hyper.learning_rate) < 1e-7 * hyper.learning_rate + 1e-15);
        }
    }
    SUBCASE("clipping bounds the effective gradient") {
        const DenoiserParameters g = filled(init, 1.0);
        CHECK(gradient_norm(g) == doctest::Approx(std::sqrt(static_cast<double>(init.parameter_count()))));
        hyper.clip_norm = 1e-3;
        DenoiserParameters p = init;
        AdamState st = init_adam(p);
        optimizer_step(p, g, st, hyper);
        double total = 0.0;
        for (double v : flatten(st.m)) total += v * v;
        CHECK(std::sqrt(total) == doctest::Approx(0.1 * 1e-3));
    }
    SUBCASE("non-finite gradients are rejected") {
        DenoiserParameters p = init;
        AdamState st = init_adam(p);
        DenoiserParameters g = init.zeros_like();
        g.out.bias(0) = std::numeric_limits<double>::infinity();
        CHECK_THROWS_AS(optimizer_step(p, g, st, hyper), NumericalError);
        CHECK(flatten(p) == flatten(init));
    }
}

TEST_CASE("data sources") {
    const ModalityLayout l({1, 4, 2, 1}, {1, 2, 2, 2});
    Mat audio = Mat::Zero(3, 8), video = Mat::Zero(3, 8);
    for (int i = 0; i < 3; ++i) {
        audio.row(i).setConstant(i);
        video.row(i).setConstant(10 + i);
    }
    const DatasetSource src(l, 3, audio, video, {2, 0, 1});
    Rng rng(3);
    int seen[3] = {0, 0, 0};
    for (int i = 0; i < 300; ++i) {
        Vec a, v;
        int c = -1;
        src.draw(rng, a, v, c);
        const int idx = static_cast<int>(a[0]);
        CHECK(v[0] == 10 + idx);
        CHECK(c == (idx == 0 ? 2 : idx - 1));
        seen[idx]++;
    }
    for (int s : seen) CHECK(s > 50);
    CHECK_THROWS_AS(DatasetSource(l, 3, Mat::Zero(0, 8), Mat::Zero(0, 8), {}), std::invalid_argument);
    CHECK_THROWS_AS(DatasetSource(l, 3, audio, video, {0, 1}), ShapeError);
    CHECK_THROWS_AS(DatasetSource(l, 3, audio, video, {0, 1, 3}), std::out_of_range);
    CHECK_THROWS_AS(DatasetSource(l, 3, Mat::Zero(3, 7), video, {0, 1, 2}), ShapeError);
}

TEST_CASE("make_batch") {
    const RunConfig cfg = tiny();
    const GeneratorSource data(cfg.make_generator());
    const NoiseSchedule s = cfg.schedule.build();
    Rng rng(1);
    const TrainingBatch b = make_batch(TaskId::A2V, 5, data, s, rng);
    CHECK(b.inputs.size() == 5);
    CHECK(b.inputs.tokens.rows() == 5 * 16);
    for (int i = 0; i < 5; ++i) {
        CHECK(b.inputs.tasks[i] == TaskId::A2V);
        CHECK(b.inputs.steps[i] >= 1);
        CHECK(b.inputs.steps[i] <= 50);
        CHECK(b.targets.mask.middleRows(i * 16, 16) == element_mask(cfg.layout, false, true));
    }
}

TEST_CASE("train loop") {
    RunConfig cfg = tiny();

    SUBCASE("zero steps returns the initialization") {
        cfg.train.total_steps = 0;
        cfg.train.warmup_steps = 0;
        const TrainResult r = run(cfg);
        CHECK(r.state.step == 0);
        CHECK(parameter_digest(r.state.params) == parameter_digest(init_params(cfg.model, cfg.seed)));
        CHECK(r.history.empty());
        CHECK(encode_checkpoint(to_checkpoint(cfg, r.state)) ==
              encode_checkpoint(to_checkpoint(cfg, init_train_state(cfg.model, cfg.train))));
    }
    SUBCASE("log rows, hooks and determinism") {
        cfg.train.checkpoint_every = 5;
        std::vector<long long> saved;
        TrainHooks hooks;
        hooks.checkpoint = [&](const TrainState& st) { saved.push_back(st.step); };
        const TrainResult a = run(cfg, hooks);
        CHECK(a.state.step == 12);
        CHECK(a.state.optimizer.step == 12);
        CHECK(a.history.size() == 12);
        REQUIRE(a.log.size() == 3);
        CHECK(a.log[0].step == 5);
        CHECK(a.log[1].step == 10);
        CHECK(a.log[2].step == 12);
        for (const TrainLogRow& row : a.log) {
            CHECK(std::isfinite(row.loss));
            CHECK(row.learning_rate == learning_rate_at(cfg.train, row.step));
        }
        CHECK(saved == std::vector<long long>{5, 10, 12});
        for (double b : a.baseline) CHECK(b > 0.0);

        const TrainResult b = run(cfg);
        CHECK(encode_checkpoint(to_checkpoint(cfg, a.state)) == encode_checkpoint(to_checkpoint(cfg, b.state)));
        for (std::size_t i = 0; i < a.history.size(); ++i) {
            CHECK(a.history[i].task == b.history[i].task);
            CHECK(a.history[i].loss == b.history[i].loss);
        }

        RunConfig other = cfg;
        other.seed = 5;
        other.resolve();
        CHECK(parameter_digest(run(other).state.params) != parameter_digest(a.state.params));
    }
    SUBCASE("loss falls below the initial baseline") {
        cfg.train.total_steps = 400;
        cfg.train.warmup_steps = 20;
        cfg.train.batch_size = 8;
        cfg.train.log_every = 400;
        const TrainResult r = run(cfg);
        for (TaskId task : {TaskId::T2AV, TaskId::A2V, TaskId::V2A}) {
            std::vector<double> tail;
            for (std::size_t i = r.history.size() - 150; i < r.history.size(); ++i) {
                if (r.history[i].task == task) tail.push_back(r.history[i].loss);
            }
            REQUIRE(!tail.empty());
            std::nth_element(tail.begin(), tail.begin() + tail.size() / 2, tail.end());
            CHECK(tail[tail.size() / 2] < r.baseline[task_code(task)]);
        }
    }
    SUBCASE("non-finite loss aborts and dumps the last good state") {
        const NanSource bad(cfg.layout);
        bool dumped = false;
        TrainHooks hooks;
        hooks.dump_on_failure = [&](const TrainState& st) {
            dumped = true;
            CHECK(st.step == 0);
            CHECK(st.params.all_finite());
        };
        CHECK_THROWS_AS(train(cfg.train, cfg.model, cfg.schedule.build(), bad, init_train_state(cfg.model, cfg.train),
                              hooks),
                        NumericalError);
        CHECK(dumped);
    }
    SUBCASE("data from another layout is rejected") {
        const ModalityLayout other({1, 2, 2, 1}, {1, 2, 2, 2});
        const NanSource mismatched(other);
        CHECK_THROWS_AS(train(cfg.train, cfg.model, cfg.schedule.build(), mismatched,
                              init_train_state(cfg.model, cfg.train)),
                        ConfigMismatchError);
    }
}

TEST_CASE("checkpoint round trip") {
    const RunConfig cfg = tiny();
    const TrainResult r = run(cfg);
    const Checkpoint ckpt = to_checkpoint(cfg, r.state);
    const std::string bytes = encode_checkpoint(ckpt);

    const Checkpoint back = decode_checkpoint(bytes);
    CHECK(encode_checkpoint(back) == bytes);
    CHECK(back.state.step == 12);
    CHECK(back.state.optimizer.step == 12);
    CHECK(back.generator_digest == ckpt.generator_digest);
    CHECK(back.config.digest() == cfg.digest());
    CHECK(parameter_digest(back.state.params) == parameter_digest(r.state.params));

    Rng rng(2);
    const UnifiedLatent z{rng.normal_matrix(16, 1), cfg.layout};
    for (TaskId task : {TaskId::T2AV, TaskId::A2V, TaskId::V2A}) {
        CHECK(forward(back.state.params, back.config.model, z, 20, 50, task, 1, false).data ==
              forward(r.state.params, cfg.model, z, 20, 50, task, 1, false).data);
    }

    SUBCASE("file round trip") {
        const auto dir = std::filesystem::temp_directory_path() / "avdiff_test_train";
        std::filesystem::create_directories(dir);
        const auto path = dir / "a.ckpt";
        save_checkpoint(path, ckpt);
        const Checkpoint loaded = load_checkpoint(path);
        save_checkpoint(dir / "b.ckpt", loaded);
        CHECK(std::filesystem::file_size(path) == bytes.size());
        CHECK(encode_checkpoint(load_checkpoint(dir / "b.ckpt")) == bytes);
        std::filesystem::remove_all(dir);
        CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), FormatError);
    }
    SUBCASE("corruption is detected") {
        CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), FormatError);
        CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() / 2)), FormatError);
        CHECK_THROWS_AS(decode_checkpoint(""), FormatError);
        std::string flipped = bytes;
        flipped[flipped.size() / 2] ^= 0x01;
        CHECK_THROWS_AS(decode_checkpoint(flipped), FormatError);
        std::string version = bytes;
        version[5] = '2';
        CHECK_THROWS_AS(decode_checkpoint(version), FormatError);
        CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), FormatError);
    }
    SUBCASE("layout mismatch") {
        CHECK_NOTHROW(require_layout(back, cfg.layout));
        CHECK_THROWS_AS(require_layout(back, ModalityLayout({1, 2, 2, 1}, {1, 2, 2, 2})), ConfigMismatchError);
    }
}
