#include <gtest/gtest.h>

#include <filesystem>

#include "genz3d/error.hpp"
#include "genz3d/pipeline.hpp"

using namespace genz3d;
using nn::Matrix;
using nn::Vector;
namespace fs = std::filesystem;

namespace {

// Three separable Gaussian classes in 3-D; class 2 is unseen.
generators::GeneratedSet toy_set(int per_class, std::uint64_t seed) {
  nn::Rng rng(seed);
  generators::GeneratedSet s;
  s.features = nn::gaussian_matrix(3 * per_class, 3, rng) * 0.3;
  for (int i = 0; i < 3 * per_class; ++i) {
    const int c = i % 3;
    s.features(i, c) += 2.0;
    s.labels.push_back(c);
    s.provenance.push_back(c == 2 ? generators::Provenance::kGenerated : generators::Provenance::kReal);
  }
  return s;
}

pipeline::ClassifierConfig small_classifier() {
  pipeline::ClassifierConfig c;
  c.epochs = 20;
  c.batch_size = 32;
  c.learning_rate = 1e-2;
  return c;
}

int class_id(const data::Dataset& ds, const std::string& name) {
  for (std::size_t i = 0; i < ds.class_names.size(); ++i)
    if (ds.class_names[i] == name) return static_cast<int>(i);
  throw std::runtime_error("no class " + name);
}

pipeline::ExperimentSpec tiny_spec(const std::string& out = "") {
  pipeline::ExperimentSpec s;
  auto synth = data::default_synth_config();
  synth.points_per_object = 24;
  synth.points_per_structure = 24;
  s.train = data::generate_synthetic(synth, data::Task::kSegmentation, 16, 11);
  s.test = data::generate_synthetic(synth, data::Task::kSegmentation, 3, 12);
  s.prototypes = prototypes::attribute_prototypes(synth.roster, 0.05, 3, 1);
  std::vector<int> seen;
  const int torus = class_id(s.train, "torus"), ridden = class_id(s.train, "ridden_box");
  for (int c = 0; c < s.train.num_classes(); ++c)
    if (c != torus && c != ridden) seen.push_back(c);
  s.split = pipeline::ZslSplit::make(seen, {torus, ridden});
  s.validation_excluded = {class_id(s.train, "ground"), class_id(s.train, "wall")};
  s.backbone.epochs = 2;
  s.backbone.neighbors = 4;
  s.backbone.point_widths = {16, 16};
  s.backbone.head_widths = {16};
  s.backbone.feature_dim = 16;
  s.gen.epochs = 5;
  s.gen.hidden = 16;
  s.gen.noise_dim = 4;
  s.classifier.epochs = 3;
  s.output_dir = out;
  return s;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("genz3d-unit-" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Split, MakeSortsAndValidates) {
  const auto s = pipeline::ZslSplit::make({3, 1}, {2});
  EXPECT_EQ(s.seen, (std::vector<int>{1, 3}));
  EXPECT_TRUE(s.is_unseen(2));
  EXPECT_THROW(pipeline::ZslSplit::make({1}, {1}), Error);
  EXPECT_THROW(pipeline::ZslSplit::make({}, {1}), Error);
  EXPECT_THROW(pipeline::ZslSplit::make({1, 1}, {}), Error);
}

TEST(Bias, DefaultsAndValidation) {
  pipeline::BiasConfig b;
  EXPECT_EQ(b.beta, 50.0);
  EXPECT_EQ(b.epsilon, 0.0);
  b.beta = 0.5;
  EXPECT_THROW(b.validate(), Error);
  b = {};
  b.epsilon = 1.5;
  EXPECT_THROW(b.validate(), Error);
}

TEST(Classifier, BetaOneEqualsUnweighted) {
  const auto set = toy_set(20, 1);
  const auto split = pipeline::ZslSplit::make({0, 1}, {2});
  const auto all_seen = pipeline::ZslSplit::make({0, 1, 2}, {});
  const auto a = pipeline::train_classifier(set, split, 3, 1.0, small_classifier());
  const auto b = pipeline::train_classifier(set, all_seen, 3, 1.0, small_classifier());
  EXPECT_EQ(serialize_checkpoint(pipeline::to_checkpoint(a, {})), serialize_checkpoint(pipeline::to_checkpoint(b, {})));
}

TEST(Classifier, SeparableToyAboveNinetyPercent) {
  const auto train = toy_set(40, 2), test = toy_set(40, 3);
  const auto split = pipeline::ZslSplit::make({0, 1}, {2});
  const auto c = pipeline::train_classifier(train, split, 3, 1.0, small_classifier());
  const auto pred = pipeline::decide(pipeline::classifier_scores(c, test.features), split, 0.0,
                                     pipeline::Candidates::kSplit);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test.labels[i];
  EXPECT_GT(correct, static_cast<int>(0.9 * static_cast<double>(pred.size())));
}

TEST(Classifier, LargerBetaRaisesUnseenPredictions) {
  auto train = toy_set(40, 4);
  train.features.col(2).array() *= 0.2;  // overlapping classes
  const auto split = pipeline::ZslSplit::make({0, 1}, {2});
  const auto lo = pipeline::train_classifier(train, split, 3, 1.0, small_classifier());
  const auto hi = pipeline::train_classifier(train, split, 3, 100.0, small_classifier());
  auto unseen = [&](const pipeline::Classifier& c) {
    int n = 0;
    for (int p : pipeline::decide(pipeline::classifier_scores(c, train.features), split, 0.0,
                                  pipeline::Candidates::kSplit))
      n += p == 2;
    return n;
  };
  EXPECT_GE(unseen(hi), unseen(lo));
}

TEST(Classifier, RejectsLabelOutsideSplit) {
  auto set = toy_set(5, 1);
  const auto split = pipeline::ZslSplit::make({0}, {2});
  EXPECT_THROW(pipeline::train_classifier(set, split, 3, 1.0, small_classifier()), Error);
}

TEST(CalibratedStacking, FlipsDecision) {
  const auto split = pipeline::ZslSplit::make({0}, {1});
  Vector s(2);
  s << 0.6, 0.4;
  const std::vector<int> cand{0, 1};
  EXPECT_EQ(pipeline::argmax_class(s, cand), 0);
  const Vector adj = pipeline::calibrated_stacking(s, split, 0.3);
  EXPECT_NEAR(adj[0], 0.3, 1e-15);
  EXPECT_EQ(adj[1], 0.4);
  EXPECT_EQ(pipeline::argmax_class(adj, cand), 1);
}

TEST(CalibratedStacking, EpsilonOneForcesUnseen) {
  const auto split = pipeline::ZslSplit::make({0, 1}, {2});
  Matrix scores(2, 3);
  scores << 0.98, 0.01, 0.01, 1e-9, 1.0 - 2e-9, 1e-9;
  for (int p : pipeline::decide(scores, split, 1.0, pipeline::Candidates::kSplit)) EXPECT_EQ(p, 2);
}

TEST(CalibratedStacking, TiesGoToLowestId) {
  Vector s = Vector::Constant(4, 0.25);
  EXPECT_EQ(pipeline::argmax_class(s, std::vector<int>{3, 1, 2}), 1);
}

TEST(CalibratedStacking, Presets) {
  EXPECT_EQ(pipeline::epsilon_preset("modelnet40"), 0.995);
  EXPECT_EQ(pipeline::epsilon_preset("s3dis"), 0.4);
  EXPECT_EQ(pipeline::epsilon_preset("scannet"), 0.6);
  EXPECT_EQ(pipeline::epsilon_preset("semantickitti"), 0.2);
  EXPECT_THROW(pipeline::epsilon_preset("nyu"), Error);
}

TEST(Candidates, ZslRestrictsToUnseen) {
  const auto split = pipeline::ZslSplit::make({0, 1}, {2, 3});
  EXPECT_EQ(pipeline::candidate_classes(split, pipeline::Candidates::kUnseenOnly), (std::vector<int>{2, 3}));
  EXPECT_EQ(pipeline::candidate_classes(split, pipeline::Candidates::kSeenOnly), (std::vector<int>{0, 1}));
  EXPECT_EQ(pipeline::candidate_classes(split, pipeline::Candidates::kSplit), (std::vector<int>{0, 1, 2, 3}));
}

TEST(GridSearch, SingletonGridReturnsIt) {
  pipeline::GridConfig g;
  g.betas = {7};
  g.epsilons = {0.3};
  int calls = 0;
  const auto r = pipeline::grid_search(
      [&](std::size_t, double) {
        ++calls;
        return 0.5;
      },
      g);
  EXPECT_EQ(r.best.beta, 7);
  EXPECT_EQ(r.best.epsilon, 0.3);
  EXPECT_GE(calls, 1);
}

TEST(GridSearch, SequentialFindsBestBetaThenEpsilon) {
  pipeline::GridConfig g;
  g.betas = {1, 5, 10, 50, 100};
  g.epsilons = {0, 0.2, 0.4, 0.6};
  // Best beta at eps 0 is index 2; best eps for it is 0.4.
  const auto f = [&](std::size_t b, double e) {
    return -std::abs(static_cast<double>(b) - 2.0) - std::abs(e - 0.4);
  };
  const auto r = pipeline::grid_search(f, g);
  EXPECT_EQ(r.best.beta, 10);
  EXPECT_EQ(r.best.epsilon, 0.4);
  EXPECT_EQ(r.beta_curve.size(), 5u);
  EXPECT_EQ(r.epsilon_curve.size(), 4u);
  // Brute-force check of the beta stage.
  double best = -1e9;
  std::size_t arg = 0;
  for (std::size_t i = 0; i < g.betas.size(); ++i)
    if (f(i, 0.0) > best) best = f(i, 0.0), arg = i;
  EXPECT_EQ(g.betas[arg], r.best.beta);
}

TEST(GridSearch, JointCoversEveryPair) {
  pipeline::GridConfig g;
  g.betas = {1, 2};
  g.epsilons = {0, 0.5, 1};
  g.joint = true;
  const auto r = pipeline::grid_search([](std::size_t b, double e) { return b == 0 && e == 1.0 ? 1.0 : 0.0; }, g);
  EXPECT_EQ(r.joint_table.size(), 6u);
  EXPECT_EQ(r.best.beta, 1);
  EXPECT_EQ(r.best.epsilon, 1.0);
}

TEST(GridSearch, DefaultGrids) {
  const pipeline::GridConfig g;
  EXPECT_EQ(g.betas, (std::vector<double>{1, 5, 10, 50, 100}));
  EXPECT_EQ(g.epsilons.size(), 12u);
  EXPECT_EQ(g.epsilons.back(), 0.995);
}

TEST(GridSearch, FoldTouchingTestUnseenIsConfigError) {
  pipeline::BiasFold fold;
  fold.trainset = toy_set(5, 1);
  fold.split = pipeline::ZslSplit::make({0, 1}, {2});
  fold.features = fold.trainset.features;
  fold.labels = fold.trainset.labels;
  try {
    pipeline::grid_search_bias({fold}, 3, small_classifier(), {}, {2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(Reference, NamesRoundTrip) {
  for (auto m : {pipeline::ReferenceMode::kFullSupervision, pipeline::ReferenceMode::kZslBackbone,
                 pipeline::ReferenceMode::kZslTrivial})
    EXPECT_EQ(pipeline::parse_reference(pipeline::reference_name(m)), m);
}

TEST(Reference, TrivialNeverPredictsUnseen) {
  const auto s = tiny_spec();
  const auto r = pipeline::run_reference(pipeline::ReferenceMode::kZslTrivial, s.train, s.test, s.split,
                                         s.backbone, s.classifier);
  ASSERT_TRUE(r.miou.has_value());
  EXPECT_EQ(r.miou->unseen, 0.0);
  EXPECT_EQ(r.miou->hm, 0.0);
}

TEST(Experiment, PredictLengthAndReevaluation) {
  auto s = tiny_spec();
  const auto r = pipeline::run_experiment(s);
  const auto& scene = s.test.scenes[0];
  const auto pred = pipeline::predict(r.model, scene.points);
  EXPECT_EQ(pred.size(), scene.size());
  // Re-evaluating the model's own predictions reproduces the report.
  std::vector<int> all_pred, all_labels;
  for (const auto& sc : s.test.scenes) {
    const auto p = pipeline::predict(r.model, sc.points);
    all_pred.insert(all_pred.end(), p.begin(), p.end());
    all_labels.insert(all_labels.end(), sc.labels.begin(), sc.labels.end());
  }
  const auto again = pipeline::evaluate_predictions(all_pred, all_labels, s.test, s.split, s.setting);
  ASSERT_TRUE(again.miou.has_value());
  EXPECT_EQ(again.miou->hm, r.report.miou->hm);
  EXPECT_EQ(again.global_accuracy, r.report.global_accuracy);
}

TEST(Experiment, ZslEvaluatesOnlyUnseenRows) {
  const auto s = tiny_spec();
  const std::vector<int> labels{0, 6, 7, 1};
  const std::vector<int> preds{0, 6, 6, 0};
  const auto r = pipeline::evaluate_predictions(preds, labels, s.test, s.split, generators::Setting::kZsl);
  EXPECT_DOUBLE_EQ(r.global_accuracy, 0.5);
}

TEST(Experiment, RerunFromCheckpointsIsBitExact) {
  const auto dir = temp_dir("experiment");
  auto s = tiny_spec(dir.string());
  const auto first = pipeline::run_experiment(s);
  ASSERT_TRUE(fs::exists(dir / "backbone.ckpt"));
  ASSERT_TRUE(fs::exists(dir / "generator.ckpt"));
  ASSERT_TRUE(fs::exists(dir / "classifier.ckpt"));
  s.resume = true;
  const auto second = pipeline::run_experiment(s);
  EXPECT_EQ(eval::render_report(first.report, eval::ReportFormat::kCsv),
            eval::render_report(second.report, eval::ReportFormat::kCsv));
  s.resume = false;
  const auto third = pipeline::run_experiment(s);
  EXPECT_EQ(eval::render_report(first.report, eval::ReportFormat::kCsv),
            eval::render_report(third.report, eval::ReportFormat::kCsv));
}

TEST(Experiment, MissingCheckpointIsDataError) {
  const auto dir = temp_dir("missing-ckpt");
  auto s = tiny_spec(dir.string());
  s.load_before = pipeline::Stage::kClassifier;
  try {
    pipeline::run_experiment(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
}

TEST(Experiment, StageErrorNamesStage) {
  auto s = tiny_spec();
  s.gen.learning_rate = -1;
  try {
    pipeline::run_experiment(s);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "generator");
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(Experiment, StopAfterBackboneHasNoReport) {
  auto s = tiny_spec();
  s.stop_after = pipeline::Stage::kBackbone;
  const auto r = pipeline::run_experiment(s);
  EXPECT_FALSE(r.report.miou.has_value());
  EXPECT_FALSE(r.model.classifier.trained());
}
