#pragma once

#include "avdiff/checkpoint.hpp"
#include "avdiff/formats.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace avdiff {

/// Bad command-line usage; maps to exit code 1.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumerical = 3 };

/// Maps an exception escaping a command to the documented exit code.
int exit_code_for(const std::exception& e);

struct GenDataOptions {
    std::filesystem::path config;
    std::filesystem::path out;
    std::optional<std::uint64_t> seed;
    std::optional<int> count;
};

struct TrainOptions {
    std::filesystem::path config;
    std::optional<std::filesystem::path> data;  // fresh generator draws when absent
    std::filesystem::path out;
    std::optional<std::filesystem::path> log;   // defaults to <out>.log.csv
};

struct SampleOptions {
    std::filesystem::path checkpoint;
    std::string task = "t2av";
    std::optional<int> class_id;  // null class when absent
    std::optional<std::filesystem::path> condition;
    std::optional<int> steps;
    std::optional<double> guidance;
    std::optional<std::string> mode;
    std::optional<int> count;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out;
};

struct EvalOptions {
    std::vector<std::filesystem::path> generated;
    std::optional<std::filesystem::path> reference;
    std::optional<std::filesystem::path> generator;
    std::vector<std::string> metrics;  // empty means all
    std::filesystem::path out;
    bool allow_mismatch = false;
};

struct PlotOptions {
    std::filesystem::path input;
    std::filesystem::path out;
};

inline constexpr const char* kTrainLogColumns = "step,task,loss,learning_rate,config_digest";
inline constexpr const char* kEvalColumns = "metric,value,n,config_digest,task,guidance";
inline const std::vector<std::string> kEvalMetrics = {"frechet", "kl", "is", "alignment"};

/// Writes the dataset container plus `.gen` and `.meta` sidecars.
void cmd_gen_data(const GenDataOptions& opt, std::ostream& log);

/// Writes the checkpoint and a training log CSV. Step 0 rows hold the
/// per-task loss of the initial parameters.
void cmd_train(const TrainOptions& opt, std::ostream& log);

/// Writes a container of generated pairs plus a `.meta` sidecar.
void cmd_sample(const SampleOptions& opt, std::ostream& log);

/// Writes one CSV row per metric and generated file. When several generated
/// files are given their parameter digests must agree.
void cmd_eval(const EvalOptions& opt, std::ostream& log);

/// Renders a training-log CSV as loss-vs-step or an eval CSV as metric-vs-guidance.
void cmd_plot(const PlotOptions& opt, std::ostream& log);

std::string format_train_log(const TrainResult& result, std::uint64_t config_digest);
/// Comma-separated rows without quoting; ragged rows are a FormatError.
std::vector<std::vector<std::string>> parse_csv(std::string_view text);

}  // namespace avdiff
