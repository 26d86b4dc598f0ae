#pragma once

// Synthetic class-incremental task streams and the Class-IL / Task-IL
// evaluation protocols.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "owmmd/network.hpp"

namespace owmmd {

struct Sample {
  Eigen::VectorXd x;
  int y = 0;
};

struct TaskDataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
  std::vector<int> class_set;  // global class indices, ascending
};

enum class Generator { gaussian_blobs, two_moons_rotations, grid_patterns };

struct StreamSpec {
  Generator generator = Generator::gaussian_blobs;
  int num_tasks = 5;
  int classes_per_task = 2;
  int train_per_class = 200;
  int test_per_class = 100;
  int input_dim = 16;
  double noise_scale = 1.0;
  std::uint64_t seed = 0;

  [[nodiscard]] int total_classes() const { return num_tasks * classes_per_task; }
};

/// Empty when the spec is valid; otherwise one message per violation.
std::vector<std::string> validate(const StreamSpec& spec);

/// Deterministic for a fixed seed. Class prototypes are pairwise at least
/// 4 * noise_scale apart.
std::vector<TaskDataset> generate(const StreamSpec& spec);

/// Splits an externally prepared dataset into class-incremental tasks: class
/// c goes to task c / classes_per_task, and each class keeps its first
/// `train_fraction` of rows (in file order) for training.
std::vector<TaskDataset> split_into_tasks(const std::vector<Sample>& samples, int num_classes,
                                          int classes_per_task, double train_fraction);

/// Reads the columnar text format: a header line "d C", then one row per
/// sample holding d floats followed by an integer label in [0, C).
/// Fields may be separated by whitespace or commas.
struct ColumnarDataset {
  int dim = 0;
  int num_classes = 0;
  std::vector<Sample> samples;
};
ColumnarDataset load_columnar(const std::filesystem::path& path);

enum class EvalMode { class_il, task_il };

[[nodiscard]] inline const char* to_string(EvalMode m) { return m == EvalMode::class_il ? "class_il" : "task_il"; }

/// Accuracy on each task's test set. class_il takes the argmax over every
/// class seen so far; task_il restricts it to the task's own classes.
/// Ties resolve to the lowest class index.
std::vector<double> evaluate(const ModelParams& model, const std::vector<TaskDataset>& tasks_seen, EvalMode mode);

/// The same protocol applied to precomputed logits, one matrix per task
/// (rows aligned with that task's test samples).
std::vector<double> evaluate_logits(const std::vector<Tensor>& logits, const std::vector<TaskDataset>& tasks_seen,
                                    EvalMode mode);

Tensor stack_inputs(const std::vector<Sample>& samples);

}  // namespace owmmd
