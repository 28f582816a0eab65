#include "avdiff/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

template <typename T>
void copy_if_set(CLI::Option* opt, const T& value, std::optional<T>& out) {
    if (opt->count() > 0) out = value;
}

}  // namespace

int main(int argc, char** argv) {
    using namespace avdiff;
    CLI::App app{"Unified audio/video diffusion on coupled toy latents"};
    app.require_subcommand(1);
    app.footer(
        "Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.\n"
        "Training log CSV columns: " + std::string(kTrainLogColumns) + " (step 0 rows are the untrained baseline).\n"
        "Eval CSV columns: " + std::string(kEvalColumns) + ".");

    GenDataOptions gen;
    std::uint64_t gen_seed = 0;
    int gen_count = 0;
    auto* gen_cmd = app.add_subcommand("gen-data", "Draw a dataset of coupled (audio, video, class) latents");
    gen_cmd->add_option("--config", gen.config, "Run config file (key = value)")->required();
    gen_cmd->add_option("--out", gen.out, "Output container path")->required();
    auto* gen_seed_opt = gen_cmd->add_option("--seed", gen_seed, "Override the config seed");
    auto* gen_count_opt = gen_cmd->add_option("--count", gen_count, "Override data.N");

    TrainOptions tr;
    std::filesystem::path tr_data;
    std::filesystem::path tr_log;
    auto* train_cmd = app.add_subcommand("train", "Train the shared denoiser on all three tasks");
    train_cmd->add_option("--config", tr.config, "Run config file")->required();
    auto* tr_data_opt = train_cmd->add_option("--data", tr_data, "Dataset container (default: fresh generator draws)");
    train_cmd->add_option("--out", tr.out, "Output checkpoint path")->required();
    auto* tr_log_opt = train_cmd->add_option("--log", tr_log, "Training log CSV (default: <out>.log.csv)");

    SampleOptions sm;
    std::string sm_class;
    std::filesystem::path sm_cond;
    int sm_steps = 0;
    double sm_guidance = 0.0;
    std::string sm_mode;
    int sm_count = 0;
    std::uint64_t sm_seed = 0;
    auto* sample_cmd = app.add_subcommand("sample", "Generate latents with a trained checkpoint");
    sample_cmd->add_option("--checkpoint", sm.checkpoint, "Checkpoint path")->required();
    sample_cmd->add_option("--task", sm.task, "t2av, a2v or v2a")->default_val("t2av");
    sample_cmd->add_option("--class", sm_class, "Class id, or 'null' for unconditional")->default_val("null");
    auto* sm_cond_opt = sample_cmd->add_option("--condition", sm_cond, "Container holding the clean modality");
    auto* sm_steps_opt = sample_cmd->add_option("--steps", sm_steps, "Sampling steps (default 30)");
    auto* sm_guid_opt = sample_cmd->add_option("--guidance", sm_guidance, "Guidance scale w (default 5)");
    auto* sm_mode_opt = sample_cmd->add_option("--mode", sm_mode, "strided or ancestral");
    auto* sm_count_opt = sample_cmd->add_option("-n,--count", sm_count, "Number of samples");
    auto* sm_seed_opt = sample_cmd->add_option("--seed", sm_seed, "Sampler seed (default: config seed)");
    sample_cmd->add_option("--out", sm.out, "Output container path")->required();

    EvalOptions ev;
    std::filesystem::path ev_ref;
    std::filesystem::path ev_gen;
    auto* eval_cmd = app.add_subcommand("eval", "Score generated latents against reference data");
    eval_cmd->add_option("--generated", ev.generated, "Generated container(s)")->required();
    auto* ev_ref_opt = eval_cmd->add_option("--reference", ev_ref, "Reference dataset container");
    auto* ev_gen_opt = eval_cmd->add_option("--generator", ev_gen, "Generator spec file (.gen)");
    eval_cmd->add_option("--metrics", ev.metrics, "Subset of: frechet kl is alignment");
    eval_cmd->add_option("--out", ev.out, "Output CSV path")->required();
    eval_cmd->add_flag("--allow-mismatch", ev.allow_mismatch, "Proceed despite digest mismatches");

    PlotOptions pl;
    auto* plot_cmd = app.add_subcommand("plot", "Render a training log or eval CSV as SVG");
    plot_cmd->add_option("--input", pl.input, "Training log or eval CSV")->required();
    plot_cmd->add_option("--out", pl.out, "Output SVG path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen_cmd) {
            copy_if_set(gen_seed_opt, gen_seed, gen.seed);
            copy_if_set(gen_count_opt, gen_count, gen.count);
            cmd_gen_data(gen, std::cout);
        } else if (*train_cmd) {
            if (tr_data_opt->count() > 0) tr.data = tr_data;
            if (tr_log_opt->count() > 0) tr.log = tr_log;
            cmd_train(tr, std::cout);
        } else if (*sample_cmd) {
            if (sm_class != "null") {
                try {
                    std::size_t used = 0;
                    sm.class_id = std::stoi(sm_class, &used);
                    if (used != sm_class.size()) throw std::invalid_argument(sm_class);
                } catch (const std::exception&) {
                    throw UsageError("--class expects an integer or 'null'");
                }
            }
            if (sm_cond_opt->count() > 0) sm.condition = sm_cond;
            copy_if_set(sm_steps_opt, sm_steps, sm.steps);
            copy_if_set(sm_guid_opt, sm_guidance, sm.guidance);
            copy_if_set(sm_mode_opt, sm_mode, sm.mode);
            copy_if_set(sm_count_opt, sm_count, sm.count);
            copy_if_set(sm_seed_opt, sm_seed, sm.seed);
            cmd_sample(sm, std::cout);
        } else if (*eval_cmd) {
            if (ev_ref_opt->count() > 0) ev.reference = ev_ref;
            if (ev_gen_opt->count() > 0) ev.generator = ev_gen;
            cmd_eval(ev, std::cout);
        } else if (*plot_cmd) {
            cmd_plot(pl, std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return kExitOk;
}
