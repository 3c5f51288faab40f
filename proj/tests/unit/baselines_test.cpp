#include <gtest/gtest.h>

#include <random>

#include "genz3d/baselines.hpp"
#include "genz3d/error.hpp"

using namespace genz3d;
using nn::Matrix;
using nn::Vector;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

// Brute-force reference: rank all classes by (distance, id), scan the first K.
int knn_oracle(const Vector& q, const generators::PrototypesByClass& p, const pipeline::ZslSplit& split, int k) {
  std::vector<std::pair<double, int>> r;
  for (const auto& [c, t] : p) r.emplace_back((q - t).norm(), c);
  std::sort(r.begin(), r.end());
  for (int i = 0; i < k; ++i)
    if (split.is_unseen(r[static_cast<std::size_t>(i)].second)) return r[static_cast<std::size_t>(i)].second;
  return r[0].second;
}

}  // namespace

TEST(Devise, IdentityToyReachesNearZeroLoss) {
  nn::Rng rng(1);
  generators::FeaturesByClass f;
  generators::PrototypesByClass p;
  for (int c = 0; c < 3; ++c) {
    p[c] = Vector::Unit(3, c);
    f[c] = Matrix::Zero(10, 3);
    f[c].rowwise() += p[c].transpose();
  }
  baselines::ProjectorConfig cfg;
  cfg.epochs = 400;
  cfg.batch_size = 30;
  cfg.learning_rate = 1e-2;
  const auto proj = baselines::train_devise_projection(f, p, cfg);
  for (int c = 0; c < 3; ++c) {
    const Matrix e = baselines::devise_embed(proj, f[c]);
    EXPECT_EQ(e.cols(), 3);
    EXPECT_LT((e.row(0).transpose() - p[c]).norm(), 1e-2);
  }
}

TEST(Devise, OutputDimensionIsPrototypeDimAndDeterministic) {
  nn::Rng rng(2);
  generators::FeaturesByClass f{{0, nn::gaussian_matrix(5, 6, rng)}, {1, nn::gaussian_matrix(5, 6, rng)}};
  generators::PrototypesByClass p{{0, Vector::Ones(4)}, {1, -Vector::Ones(4)}};
  baselines::ProjectorConfig cfg;
  cfg.epochs = 3;
  const auto a = baselines::train_devise_projection(f, p, cfg);
  const auto b = baselines::train_devise_projection(f, p, cfg);
  EXPECT_EQ(baselines::devise_embed(a, f[0]).cols(), 4);
  EXPECT_EQ(baselines::devise_embed(a, f[0]), baselines::devise_embed(b, f[0]));
  p.erase(1);
  EXPECT_THROW(baselines::train_devise_projection(f, p, cfg), Error);
}

TEST(Conse, OneHotGivesPrototype) {
  Matrix t(3, 2);
  t << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(baselines::convex_combination(vec({0, 1, 0}), t), vec({3, 4}));
}

TEST(Conse, UniformGivesCentroid) {
  Matrix t(2, 2);
  t << 0, 0, 2, 4;
  EXPECT_EQ(baselines::convex_combination(vec({0.5, 0.5}), t), vec({1, 2}));
}

TEST(Conse, StaysInConvexHull) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix t(3, 2);
  t << 0, 0, 1, 0, 0, 1;  // simplex x, y >= 0, x + y <= 1
  for (int i = 0; i < 200; ++i) {
    Vector p = vec({u(rng), u(rng), u(rng)});
    p /= p.sum();
    const Vector e = baselines::convex_combination(p, t);
    EXPECT_GE(e[0], -1e-15);
    EXPECT_GE(e[1], -1e-15);
    EXPECT_LE(e.sum(), 1.0 + 1e-15);
  }
  EXPECT_THROW(baselines::convex_combination(vec({1}), t), std::invalid_argument);
}

TEST(Knn, KOneIsNearest) {
  const auto split = pipeline::ZslSplit::make({0, 1}, {2});
  generators::PrototypesByClass p{{0, vec({0})}, {1, vec({1})}, {2, vec({3})}};
  EXPECT_EQ(baselines::knn_unseen_preference(vec({0.9}), p, split, 1), 1);
}

TEST(Knn, UnseenWithinKWins) {
  // Distances 1, 2, 3 with the unseen class farthest.
  const auto split = pipeline::ZslSplit::make({0, 1}, {2});
  generators::PrototypesByClass p{{0, vec({1})}, {1, vec({2})}, {2, vec({3})}};
  EXPECT_EQ(baselines::knn_unseen_preference(vec({0}), p, split, 2), 0);
  EXPECT_EQ(baselines::knn_unseen_preference(vec({0}), p, split, 3), 2);
}

TEST(Knn, TiesGoToLowestId) {
  const auto split = pipeline::ZslSplit::make({0, 1}, {2, 3});
  generators::PrototypesByClass p{{0, vec({1})}, {1, vec({-1})}, {2, vec({5})}, {3, vec({-5})}};
  EXPECT_EQ(baselines::knn_unseen_preference(vec({0}), p, split, 1), 0);
  EXPECT_EQ(baselines::knn_unseen_preference(vec({0}), p, split, 4), 2);
}

TEST(Knn, MatchesBruteForceAndMonotoneInK) {
  nn::Rng rng(4);
  const auto split = pipeline::ZslSplit::make({0, 1, 2, 3, 4}, {5, 6});
  generators::PrototypesByClass p;
  for (int c = 0; c < 7; ++c) p[c] = nn::gaussian_matrix(1, 3, rng).row(0).transpose();
  for (int i = 0; i < 200; ++i) {
    const Vector q = nn::gaussian_matrix(1, 3, rng).row(0).transpose();
    bool was_unseen = false;
    for (int k = 1; k <= 7; ++k) {
      const int got = baselines::knn_unseen_preference(q, p, split, k);
      EXPECT_EQ(got, knn_oracle(q, p, split, k));
      const bool unseen = split.is_unseen(got);
      EXPECT_TRUE(unseen || !was_unseen);  // once unseen, stays unseen for larger K
      was_unseen = unseen;
    }
  }
}

TEST(Knn, AdversarialKOneNeverPredictsUnseen) {
  const auto split = pipeline::ZslSplit::make({0}, {1});
  generators::PrototypesByClass p{{0, vec({0, 0})}, {1, vec({100, 100})}};
  nn::Rng rng(5);
  for (int i = 0; i < 50; ++i)
    EXPECT_EQ(baselines::knn_unseen_preference(nn::gaussian_matrix(1, 2, rng).row(0).transpose(), p, split, 1), 0);
}

TEST(Knn, KBeyondClassCountRejected) {
  const auto split = pipeline::ZslSplit::make({0}, {1});
  generators::PrototypesByClass p{{0, vec({0})}, {1, vec({1})}};
  EXPECT_THROW(baselines::knn_unseen_preference(vec({0}), p, split, 3), Error);
  EXPECT_THROW(baselines::knn_unseen_preference(vec({0}), p, split, 0), Error);
}

TEST(Knn, CosineDistance) {
  const auto split = pipeline::ZslSplit::make({0}, {1});
  generators::PrototypesByClass p{{0, vec({10, 0})}, {1, vec({0.1, 0.1})}};
  EXPECT_EQ(baselines::knn_unseen_preference(vec({1, 0.9}), p, split, 1, baselines::Distance::kCosine), 1);
  EXPECT_EQ(baselines::knn_unseen_preference(vec({1, 0.9}), p, split, 1, baselines::Distance::kEuclidean), 1);
  EXPECT_EQ(baselines::knn_unseen_preference(vec({5, 0.9}), p, split, 1, baselines::Distance::kCosine), 0);
}

TEST(Presets, KPerDataset) {
  EXPECT_EQ(baselines::k_preset(baselines::Method::kDevise, "s3dis"), 7);
  EXPECT_EQ(baselines::k_preset(baselines::Method::kZslpc, "s3dis"), 5);
  EXPECT_EQ(baselines::k_preset(baselines::Method::kDevise, "scannet"), 2);
  EXPECT_EQ(baselines::k_preset(baselines::Method::kZslpc, "semantickitti"), 5);
  EXPECT_THROW(baselines::k_preset(baselines::Method::kDevise, "x"), Error);
  EXPECT_EQ(baselines::parse_method(baselines::method_name(baselines::Method::kZslpc)), baselines::Method::kZslpc);
}

TEST(TrainBaseline, PredictsOneLabelPerPoint) {
  auto synth = data::default_synth_config();
  synth.points_per_object = 24;
  synth.points_per_structure = 24;
  const auto train = data::generate_synthetic(synth, data::Task::kSegmentation, 6, 3);
  const auto protos = prototypes::attribute_prototypes(synth.roster, 0.0, 0, 1);
  const auto split = pipeline::ZslSplit::make({0, 1, 2, 3, 4, 5}, {6, 7});
  backbone::BackboneConfig bb;
  bb.epochs = 1;
  bb.neighbors = 4;
  baselines::ProjectorConfig pc;
  pc.epochs = 2;
  for (auto m : {baselines::Method::kDevise, baselines::Method::kZslpc}) {
    const auto model = baselines::train_baseline(m, train, split, protos, bb, pc);
    const auto& scene = train.scenes[0];
    const auto pred = baselines::baseline_predict(model, scene.points, 3);
    EXPECT_EQ(pred.size(), scene.size());
    for (int c : pred) EXPECT_TRUE(c >= 0 && c < 8);
  }
}
