#pragma once

// The four-step procedure: (1) backbone on seen classes, (2) conditional
// generator on seen features, (3) final classifier on generated unseen (plus
// real seen) features, (4) inference through backbone and classifier with
// both bias-reduction mechanisms: the unseen-class loss weight beta and the
// seen-score offset epsilon (calibrated stacking).

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "genz3d/backbone.hpp"
#include "genz3d/data.hpp"
#include "genz3d/eval.hpp"
#include "genz3d/generators.hpp"
#include "genz3d/prototypes.hpp"

namespace genz3d::pipeline {

struct ZslSplit {
  std::vector<int> seen;    // sorted
  std::vector<int> unseen;  // sorted

  // Sorts, rejects overlap, duplicates, negative ids and an empty seen set.
  static ZslSplit make(std::vector<int> seen, std::vector<int> unseen);

  bool is_seen(int c) const;
  bool is_unseen(int c) const;
  std::vector<int> all() const;
  std::set<int> seen_set() const { return {seen.begin(), seen.end()}; }
  std::set<int> unseen_set() const { return {unseen.begin(), unseen.end()}; }
};

ZslSplit split_from_file(const data::SplitFile& file, const data::Dataset& dataset);

struct BiasConfig {
  double beta = 50.0;    // >= 1
  double epsilon = 0.0;  // in [0, 1]

  void validate() const;
};

// Named dataset-wise epsilon defaults.
const std::map<std::string, double>& epsilon_presets();
double epsilon_preset(const std::string& name);

struct ClassifierConfig {
  std::vector<int> hidden;  // empty = single linear layer
  int epochs = 30;
  int batch_size = 256;
  double learning_rate = 5e-3;
  std::uint64_t seed = 1;

  void validate() const;
};

// Softmax classifier over every class id of the dataset (outputs indexed by
// class id). Which ids may be predicted is decided at inference time.
struct Classifier {
  nn::Mlp net;

  bool trained() const { return !net.empty(); }
  int num_classes() const { return net.out_dim(); }
};

// Weighted cross-entropy: samples labeled with an unseen class weigh beta,
// the rest 1. Labels must lie in split.all().
Classifier train_classifier(const generators::GeneratedSet& trainset, const ZslSplit& split,
                            int num_classes, double beta, const ClassifierConfig& config);

// Softmax probabilities, one row per feature row.
nn::Matrix classifier_scores(const Classifier& classifier, const nn::Matrix& features);

// Seen entries minus epsilon, no clamping; unseen and other entries untouched.
nn::Vector calibrated_stacking(const nn::Vector& scores, const ZslSplit& split, double epsilon);

enum class Candidates {
  kSplit,       // seen and unseen (GZSL)
  kUnseenOnly,  // ZSL
  kSeenOnly,    // a classifier that never learned unseen classes
};

// Argmax over the candidate ids; equal scores go to the lowest id.
int argmax_class(const nn::Vector& scores, std::span<const int> candidates);

std::vector<int> candidate_classes(const ZslSplit& split, Candidates which);

// softmax scores -> calibrated stacking -> restricted argmax, per row.
std::vector<int> decide(const nn::Matrix& scores, const ZslSplit& split, double epsilon,
                        Candidates which);

// Backbone features of every point (segmentation) or cloud (classification).
struct FeatureTable {
  nn::Matrix features;
  std::vector<int> labels;
  std::vector<std::size_t> scene_offsets;  // first row of each scene, plus a final end offset
};

FeatureTable extract_features(const backbone::BackboneModel& model, const data::Dataset& dataset);

// Rows whose label is in `classes` (all rows when null), grouped by label.
generators::FeaturesByClass group_by_class(const FeatureTable& table, const std::set<int>* classes = nullptr,
                                           const std::vector<std::size_t>* scenes = nullptr);

std::map<int, std::int64_t> label_frequencies(const FeatureTable& table, const std::set<int>& classes);

generators::PrototypesByClass prototypes_for(const prototypes::PrototypeSet& set,
                                             const std::vector<std::string>& class_names,
                                             const std::vector<int>& classes);

struct PipelineModel {
  backbone::BackboneModel backbone;
  generators::Generator generator;
  Classifier classifier;
  BiasConfig bias;
  ZslSplit split;
  generators::Setting setting = generators::Setting::kGzsl;
};

// One class id (classification) or one per point (segmentation).
std::vector<int> predict(const PipelineModel& model, const nn::Matrix& cloud);

enum class Objective { kHm, kHmIou };

struct BiasFold {
  generators::GeneratedSet trainset;
  ZslSplit split;  // seen = fold train classes, unseen = validation classes
  nn::Matrix features;
  std::vector<int> labels;
};

struct GridConfig {
  std::vector<double> betas{1, 5, 10, 50, 100};
  std::vector<double> epsilons{0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.995};
  Objective objective = Objective::kHmIou;
  generators::Setting setting = generators::Setting::kGzsl;
  bool joint = false;
  int threads = 1;

  void validate() const;
};

struct GridCell {
  double beta = 0.0;
  double epsilon = 0.0;
  double objective = 0.0;
};

struct GridResult {
  BiasConfig best;
  std::vector<GridCell> beta_curve;     // epsilon = 0
  std::vector<GridCell> epsilon_curve;  // beta = best beta
  std::vector<GridCell> joint_table;    // joint search only
};

// Grid search over a mean-objective function. Sequential: beta at eps = 0,
// then eps at the chosen beta. Joint: every pair. Ties keep the earlier grid
// value.
using ObjectiveFn = std::function<double(std::size_t beta_index, double epsilon)>;
GridResult grid_search(const ObjectiveFn& objective, const GridConfig& config);

// Fold-based search: one classifier per (fold, beta), epsilon applied at
// prediction time. Any fold touching a class in `test_unseen` is an error.
GridResult grid_search_bias(const std::vector<BiasFold>& folds, int num_classes,
                            const ClassifierConfig& classifier, const GridConfig& config,
                            const std::set<int>& test_unseen);

// HM of the seen/unseen measure over the fold classes (unseen measure alone
// in ZSL).
double fold_objective(const eval::ConfusionMatrix& cm, const ZslSplit& split, Objective objective,
                      generators::Setting setting);

struct FoldOptions {
  generators::GeneratorKind generator = generators::GeneratorKind::kGmmn;
  generators::GenConfig gen;
  generators::TrainsetOptions trainset;
  generators::Setting setting = generators::Setting::kGzsl;
  data::Task task = data::Task::kSegmentation;
  int holdout_every = 4;  // every n-th scene is held out for fold evaluation
};

// Folds built from seen-only training features: the generator is retrained
// per fold on the fold's train classes, validation classes are generated, and
// held-out scenes are evaluated.
std::vector<BiasFold> build_validation_folds(const FeatureTable& seen_train,
                                             const prototypes::PrototypeSet& protos,
                                             const std::vector<std::string>& class_names,
                                             const std::vector<data::ValidationSplit>& splits,
                                             const FoldOptions& options);

enum class ReferenceMode { kFullSupervision, kZslBackbone, kZslTrivial };

std::string reference_name(ReferenceMode mode);
ReferenceMode parse_reference(const std::string& name);

// full_supervision: backbone and classifier on all classes.
// zsl_backbone: backbone on seen classes, classifier on all classes.
// zsl_trivial: backbone and classifier on seen classes only.
// `seen_backbone` optionally supplies an already trained seen-only backbone.
eval::MetricsReport run_reference(ReferenceMode mode, const data::Dataset& train,
                                  const data::Dataset& test, const ZslSplit& split,
                                  const backbone::BackboneConfig& backbone_config,
                                  const ClassifierConfig& classifier_config,
                                  const backbone::TrainedBackbone* seen_backbone = nullptr);

// Seen-only training set for the backbone: scenes with unseen points dropped.
data::Dataset seen_training_set(const data::Dataset& train, const ZslSplit& split);

eval::ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& labels,
                                int num_classes);

// Report for `predictions` against `labels`; in ZSL only unseen-labeled rows
// are counted.
eval::MetricsReport evaluate_predictions(const std::vector<int>& predictions, const std::vector<int>& labels,
                                         const data::Dataset& dataset, const ZslSplit& split,
                                         generators::Setting setting);

enum class PrototypeSource { kFile, kIdeal };

enum class Stage { kBackbone = 1, kGenerator = 2, kClassifier = 3, kEvaluation = 4 };

std::string stage_name(Stage stage);

struct ExperimentSpec {
  data::Dataset train;
  data::Dataset test;
  prototypes::PrototypeSet prototypes;
  ZslSplit split;
  std::vector<int> validation_excluded;
  generators::Setting setting = generators::Setting::kGzsl;
  generators::GeneratorKind generator = generators::GeneratorKind::kGmmn;
  PrototypeSource prototype_source = PrototypeSource::kFile;
  backbone::BackboneConfig backbone;
  generators::GenConfig gen;
  generators::TrainsetOptions trainset;
  ClassifierConfig classifier;
  BiasConfig bias;
  bool grid_search = false;
  GridConfig grid;
  int validation_splits = 3;
  std::uint64_t seed = 1;
  std::string output_dir;  // checkpoints are persisted here when non-empty
  bool resume = false;     // load checkpoints found in output_dir instead of training
  Stage load_before = Stage::kBackbone;  // stages before this one must load their checkpoint
  Stage stop_after = Stage::kEvaluation;
};

struct ExperimentResult {
  eval::MetricsReport report;  // empty unless the evaluation stage ran
  std::optional<GridResult> grid;
  PipelineModel model;
};

// Stages: backbone, generator, classifier, evaluation. Failures surface as
// StageError naming the stage (InductiveViolation propagates unchanged).
ExperimentResult run_experiment(const ExperimentSpec& spec);

Checkpoint to_checkpoint(const Classifier& classifier, const BiasConfig& bias);
Classifier classifier_from_checkpoint(const Checkpoint& ckpt, BiasConfig* bias = nullptr);

}  // namespace genz3d::pipeline
