#pragma once

// Experiment configuration files: `[section]` headers followed by
// `key = value` lines; `#` starts a comment. Unknown sections or keys are
// errors. Relative paths resolve against the config file's directory; the
// output directory resolves against $GENZ3D_OUTPUT_ROOT when set.
//
//   [data]        train, test, prototypes (one file, or two comma-separated
//                 files to concatenate), split
//   [experiment]  mode, setting, generator, seed, output, prototype_source,
//                 prototype_concat, normalize_prototypes, allow_zsl_segmentation
//   [backbone]    seed, epochs, batch_size, learning_rate, feature_dim, neighbors,
//                 point_widths, head_widths
//   [generator]   seed, noise_dim, hidden, bandwidths, epochs, batch_size,
//                 learning_rate, dae_noise, per_unseen_class, budget
//   [classifier]  seed, epochs, batch_size, learning_rate, hidden
//   [bias]        beta, epsilon, epsilon_preset
//   [grid]        enabled, betas, epsilons, joint, objective, validation_splits, threads
//   [baseline]    method, k, distance, epochs, learning_rate

#include <cstdint>
#include <string>
#include <vector>

#include "genz3d/baselines.hpp"
#include "genz3d/pipeline.hpp"

namespace genz3d::config {

inline constexpr const char* kOutputRootEnv = "GENZ3D_OUTPUT_ROOT";

enum class RunMode { kGenerative, kFullSupervision, kZslBackbone, kZslTrivial, kBaseline };

std::string run_mode_name(RunMode m);
RunMode parse_run_mode(const std::string& name);

struct ExperimentConfig {
  std::string train_path;
  std::string test_path;
  std::vector<std::string> prototype_paths;
  std::string split_path;
  std::string output_dir = "genz3d-out";

  RunMode mode = RunMode::kGenerative;
  generators::Setting setting = generators::Setting::kGzsl;
  generators::GeneratorKind generator = generators::GeneratorKind::kGmmn;
  pipeline::PrototypeSource prototype_source = pipeline::PrototypeSource::kFile;
  bool normalize_before_concat = false;  // prototype_concat = normalized
  bool normalize_prototypes = false;
  bool allow_zsl_segmentation = false;
  std::uint64_t seed = 1;

  backbone::BackboneConfig backbone;
  generators::GenConfig gen;
  generators::TrainsetOptions trainset;
  pipeline::ClassifierConfig classifier;
  pipeline::BiasConfig bias;
  bool grid_search = false;
  pipeline::GridConfig grid;
  int validation_splits = 3;

  baselines::Method baseline = baselines::Method::kDevise;
  int k = 5;
  baselines::Distance distance = baselines::Distance::kEuclidean;
  baselines::ProjectorConfig projector;

  // Range checks only; no file access.
  void validate() const;
  // validate() plus existence of every referenced input.
  void validate_files() const;
};

// Seeds of every stage are derived from `seed` unless the section sets its
// own. Throws Error(kConfig) with the line number on malformed input.
ExperimentConfig parse_config(const std::string& text, const std::string& base_dir = ".",
                              const std::string& source = "<memory>");
ExperimentConfig load_config(const std::string& path);

// Output directory after applying $GENZ3D_OUTPUT_ROOT to relative paths.
std::string resolve_output(const std::string& dir);

// Loads datasets, prototypes and split; checks that the task and setting
// combination is legal.
pipeline::ExperimentSpec load_experiment(const ExperimentConfig& config);

}  // namespace genz3d::config
