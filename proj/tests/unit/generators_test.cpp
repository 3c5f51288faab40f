#include <gtest/gtest.h>

#include <cmath>

#include "genz3d/error.hpp"
#include "genz3d/generators.hpp"

using namespace genz3d;
using nn::Matrix;
using nn::Vector;

namespace {

// Two well separated Gaussian blobs in 4-D with distinct prototypes.
struct Toy {
  generators::FeaturesByClass features;
  generators::PrototypesByClass prototypes;
};

Toy toy(int n = 60) {
  nn::Rng rng(5);
  Toy t;
  Matrix a = nn::gaussian_matrix(n, 4, rng) * 0.3;
  Matrix b = nn::gaussian_matrix(n, 4, rng) * 0.3;
  a.col(0).array() += 2.0;
  b.col(1).array() += 2.0;
  t.features[0] = a;
  t.features[1] = b;
  t.prototypes[0] = Vector::Unit(3, 0);
  t.prototypes[1] = Vector::Unit(3, 1);
  return t;
}

generators::GenConfig small_config() {
  generators::GenConfig c;
  c.noise_dim = 4;
  c.hidden = 32;
  c.epochs = 150;
  c.batch_size = 32;
  c.learning_rate = 3e-3;
  return c;
}

}  // namespace

TEST(Mmd, SelfDistanceIsZero) {
  nn::Rng rng(1);
  const Matrix x = nn::gaussian_matrix(8, 3, rng);
  const std::vector<double> s{1, 2};
  EXPECT_LE(std::abs(generators::mmd_biased(x, x, s)), 1e-12);
}

TEST(Mmd, ClosedFormSinglePoints) {
  Matrix x(1, 1), y(1, 1);
  x << 0;
  y << 1;
  const std::vector<double> s{1.0};
  EXPECT_NEAR(generators::mmd_biased(x, y, s), 2.0 - 2.0 * std::exp(-0.5), 1e-15);
  EXPECT_NEAR(generators::mmd_biased(x, y, s), 0.786939, 1e-6);
}

TEST(Mmd, SymmetricExactly) {
  nn::Rng rng(2);
  const Matrix x = nn::gaussian_matrix(5, 3, rng), y = nn::gaussian_matrix(7, 3, rng);
  const std::vector<double> s{0.5, 1, 4};
  EXPECT_EQ(generators::mmd_biased(x, y, s), generators::mmd_biased(y, x, s));
}

TEST(Mmd, RejectsEmptyAndMismatchedSets) {
  const std::vector<double> s{1};
  EXPECT_THROW(generators::mmd_biased(Matrix(0, 2), Matrix::Zero(1, 2), s), std::invalid_argument);
  EXPECT_THROW(generators::mmd_biased(Matrix::Zero(1, 2), Matrix::Zero(1, 3), s), std::invalid_argument);
}

TEST(Mmd, GradientMatchesFiniteDifferences) {
  nn::Rng rng(3);
  Matrix x = nn::gaussian_matrix(4, 3, rng);
  const Matrix y = nn::gaussian_matrix(5, 3, rng);
  const std::vector<double> s{0.7, 2.0};
  Matrix g;
  generators::mmd_biased_with_grad(x, y, s, g);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + 1e-6;
    const double up = generators::mmd_biased(x, y, s);
    x.data()[i] = keep - 1e-6;
    const double down = generators::mmd_biased(x, y, s);
    x.data()[i] = keep;
    EXPECT_NEAR(g.data()[i], (up - down) / 2e-6, 1e-7);
  }
}

TEST(Mmd, MedianPairwiseDistance) {
  Matrix x(3, 1);
  x << 0, 1, 3;
  EXPECT_DOUBLE_EQ(generators::median_pairwise_distance(x), 2.0);
  EXPECT_DOUBLE_EQ(generators::median_pairwise_distance(Matrix::Zero(1, 2)), 1.0);
}

TEST(Gmmn, TrainingReducesMmdAndIsDeterministic) {
  const Toy t = toy();
  const auto g = generators::train_gmmn(t.features, t.prototypes, small_config());
  ASSERT_FALSE(g.loss_trace.empty());
  EXPECT_LT(g.loss_trace.back(), g.loss_trace.front());
  EXPECT_EQ(g.feature_dim, 4);
  const Matrix s = generators::sample_features(g, t.prototypes.at(0), 10, 1);
  EXPECT_EQ(s.rows(), 10);
  EXPECT_EQ(s.cols(), 4);
  const auto g2 = generators::train_gmmn(t.features, t.prototypes, small_config());
  EXPECT_EQ(serialize_checkpoint(generators::to_checkpoint(g)), serialize_checkpoint(generators::to_checkpoint(g2)));
}

TEST(Gmmn, ClassMeansSeparate) {
  const Toy t = toy();
  const auto g = generators::train_gmmn(t.features, t.prototypes, small_config());
  const Vector m0 = generators::sample_features(g, t.prototypes.at(0), 200, 3).colwise().mean();
  const Vector m1 = generators::sample_features(g, t.prototypes.at(1), 200, 3).colwise().mean();
  EXPECT_GT((m0 - m1).norm(), 1.0);
  // Each class's samples land nearer their own real mean.
  const Vector r0 = t.features.at(0).colwise().mean(), r1 = t.features.at(1).colwise().mean();
  EXPECT_LT((m0 - r0).norm(), (m0 - r1).norm());
  EXPECT_LT((m1 - r1).norm(), (m1 - r0).norm());
}

TEST(Gmmn, MissingPrototypeIsConfigError) {
  Toy t = toy(10);
  t.prototypes.erase(1);
  try {
    generators::train_gmmn(t.features, t.prototypes, small_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(Dae, ReconstructsWithoutCorruption) {
  nn::Rng rng(7);
  generators::FeaturesByClass f;
  f[0] = nn::gaussian_matrix(10, 4, rng);
  generators::PrototypesByClass p;
  p[0] = Vector::Ones(2);
  generators::GenConfig c;
  c.noise_dim = 16;
  c.hidden = 64;
  c.dae_noise = 0.0;
  c.epochs = 1500;
  c.batch_size = 10;
  c.learning_rate = 3e-3;
  const auto g = generators::train_dae(f, p, c);
  const Matrix r = generators::dae_reconstruct(g, f[0], p[0]);
  EXPECT_EQ(r.cols(), 4);
  EXPECT_LT((r - f[0]).squaredNorm() / static_cast<double>(r.size()), 1e-3);
  EXPECT_LT(g.loss_trace.back(), g.loss_trace.front());
}

TEST(Sampling, EmptyAndDeterministic) {
  const Toy t = toy(20);
  auto c = small_config();
  c.epochs = 3;
  const auto g = generators::train_gmmn(t.features, t.prototypes, c);
  EXPECT_EQ(generators::sample_features(g, t.prototypes.at(0), 0, 1).rows(), 0);
  EXPECT_EQ(generators::sample_features(g, t.prototypes.at(0), 5, 9),
            generators::sample_features(g, t.prototypes.at(0), 5, 9));
  EXPECT_NE(generators::sample_features(g, t.prototypes.at(0), 5, 9),
            generators::sample_features(g, t.prototypes.at(0), 5, 10));
  EXPECT_THROW(generators::sample_features(g, Vector::Ones(7), 2, 1), Error);
}

TEST(Checkpoint, GeneratorRoundTrip) {
  const Toy t = toy(20);
  auto c = small_config();
  c.epochs = 2;
  for (auto kind : {generators::GeneratorKind::kGmmn, generators::GeneratorKind::kDae}) {
    const auto g = generators::train_generator(kind, t.features, t.prototypes, c);
    const auto back = generators::generator_from_checkpoint(parse_checkpoint(serialize_checkpoint(generators::to_checkpoint(g))));
    EXPECT_EQ(back.kind, kind);
    EXPECT_EQ(generators::sample_features(back, t.prototypes.at(1), 4, 2),
              generators::sample_features(g, t.prototypes.at(1), 4, 2));
  }
}

TEST(Trainset, ZslClassificationDefaults) {
  const Toy t = toy(20);
  auto c = small_config();
  c.epochs = 1;
  const auto g = generators::train_gmmn(t.features, t.prototypes, c);
  generators::PrototypesByClass unseen{{5, Vector::Unit(3, 2)}, {6, Vector::Ones(3)}};
  const auto set = generators::build_classifier_trainset(generators::Setting::kZsl, g, unseen, nullptr, {},
                                                        data::Task::kClassification, {});
  EXPECT_EQ(set.size(), 1000u);
  EXPECT_EQ(set.count(generators::Provenance::kGenerated), 1000u);
}

TEST(Trainset, GzslContainsEveryRealSeenFeatureOnce) {
  const Toy t = toy(20);
  auto c = small_config();
  c.epochs = 1;
  const auto g = generators::train_gmmn(t.features, t.prototypes, c);
  generators::PrototypesByClass unseen{{5, Vector::Unit(3, 2)}};
  const auto set = generators::build_classifier_trainset(generators::Setting::kGzsl, g, unseen, &t.features,
                                                        {{0, 20}, {1, 20}}, data::Task::kClassification, {});
  EXPECT_EQ(set.count(generators::Provenance::kReal), 40u);
  std::size_t matched = 0;
  for (const auto& [cls, f] : t.features)
    for (Eigen::Index i = 0; i < f.rows(); ++i)
      for (std::size_t r = 0; r < set.size(); ++r)
        if (set.provenance[r] == generators::Provenance::kReal && set.labels[r] == cls &&
            set.features.row(static_cast<Eigen::Index>(r)) == f.row(i))
          ++matched;
  EXPECT_EQ(matched, 40u);
  EXPECT_THROW(generators::build_classifier_trainset(generators::Setting::kGzsl, g, unseen, nullptr, {},
                                                     data::Task::kClassification, {}),
               Error);
}

TEST(Trainset, SegmentationCountsFollowFrequencies) {
  const auto counts = generators::generation_counts(data::Task::kSegmentation, {{0, 100}, {1, 100}}, {2, 3}, {});
  EXPECT_EQ(counts.at(2), counts.at(3));
  EXPECT_EQ(counts.at(2), 100);
  generators::TrainsetOptions o;
  o.budget = 800;
  const auto scaled = generators::generation_counts(data::Task::kSegmentation, {{0, 100}, {1, 300}}, {2}, o);
  EXPECT_EQ(scaled.at(2), std::llround(800.0 * 200.0 / 600.0));
}

TEST(Names, RoundTrip) {
  for (auto k : {generators::GeneratorKind::kGmmn, generators::GeneratorKind::kDae})
    EXPECT_EQ(generators::parse_generator(generators::generator_name(k)), k);
  for (auto s : {generators::Setting::kZsl, generators::Setting::kGzsl})
    EXPECT_EQ(generators::parse_setting(generators::setting_name(s)), s);
  EXPECT_THROW(generators::parse_generator("vae"), Error);
}
