#pragma once

// Experiment runner: JSON config in, deterministic CSV files out.
//
// Config schema (every key optional; defaults shown by `owmmd demo --print-config`):
//   stream:      generator, num_tasks, classes_per_task, train_per_class,
//                test_per_class, input_dim, noise_scale, seed,
//                dataset_file, train_fraction
//   model:       feature_widths
//   hyper:       alpha, beta, gamma, eta, batch_size, buffer_capacity,
//                epochs_per_task, seed
//   regularizer: distance (mmd|l2|cosine), adaptive, layer_mask,
//                kernel {kind (rbf|linear), bandwidths, bandwidth_mode}
//   variants:    [{name, overrides}] where overrides is a JSON merge patch
//                over the top-level config
//   num_seeds, output_dir
//
// Output files:
//   metrics.csv  variant,seed,task,eval_task,accuracy,mode
//   summary.csv  variant,mode,avg_acc_mean,avg_acc_std,bwt_mean,bwt_std
//   weights.csv  variant,seed,task,epoch,w1..wK

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "owmmd/trainer.hpp"

namespace owmmd {

struct RunSettings {
  StreamSpec stream;
  std::optional<std::filesystem::path> dataset_file;
  double train_fraction = 0.7;
  ModelSpec model;
  HyperParams hyper;
  RegularizerConfig regularizer;
};

struct Variant {
  std::string name;
  nlohmann::json overrides = nlohmann::json::object();
};

struct ExperimentConfig {
  nlohmann::json base = nlohmann::json::object();  // config without variants
  std::vector<Variant> variants;
  int num_seeds = 1;
  std::filesystem::path output_dir = "owmmd_out";
};

/// The built-in 5-task blob stream with an OWMMD variant and the DER++
/// baseline (gamma = 0).
nlohmann::json default_config_json();

/// Parses the top-level document. Structural problems (wrong JSON types,
/// unknown enum names) throw ConfigError naming the field.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Settings of one variant (base merged with its overrides).
RunSettings resolve_variant(const ExperimentConfig& config, const Variant& variant);

/// Every violated constraint as "field: constraint"; empty iff valid.
std::vector<std::string> validate(const ExperimentConfig& config);

/// Keeps only the named variants, in the given order. Throws ConfigError on
/// an unknown name.
void select_variants(ExperimentConfig& config, const std::vector<std::string>& names);

/// Sets hyper.seed of the base config (run seeds are seed + run_index).
void override_seed(ExperimentConfig& config, std::uint64_t seed);

struct RunRecord {
  std::string variant;
  std::uint64_t seed = 0;
  StreamResult result;
};

/// Executes one (variant, run_index) job.
RunRecord run_one(const ExperimentConfig& config, const Variant& variant, int run_index,
                  const StepObserver& observer = {});

/// Runs every variant x seed and writes the three CSV files into
/// config.output_dir. Jobs are spread over `threads` workers; output does
/// not depend on the thread count.
std::vector<RunRecord> run(const ExperimentConfig& config, unsigned threads = 1);

void write_outputs(const ExperimentConfig& config, const std::vector<RunRecord>& records);

}  // namespace owmmd
