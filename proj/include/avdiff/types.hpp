#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace avdiff {

/// Row-major dense matrix; the working tensor type of the library.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

/// Tensor shapes or dimensions do not agree.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A file or serialized record is malformed, truncated or fails its digest.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Two artifacts were produced under incompatible configurations.
class ConfigMismatchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// NaN/Inf encountered in a loss, gradient or sampler state.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Modality : std::uint8_t { Audio = 0, Video = 1 };

/// Generation task. Integer codes are stable and used in serialization.
enum class TaskId : std::uint8_t { T2AV = 0, A2V = 1, V2A = 2 };

inline constexpr int kNumTasks = 3;

/// Class id used for "no condition"; routes to the null embedding row.
inline constexpr int kNullClass = -1;

inline int task_code(TaskId task) { return static_cast<int>(task); }

TaskId task_from_code(int code);
TaskId parse_task(std::string_view name);
std::string_view task_name(TaskId task);

inline void require_same_shape(const Mat& a, const Mat& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
    }
}

}  // namespace avdiff
