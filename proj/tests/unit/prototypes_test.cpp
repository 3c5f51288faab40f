#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "genz3d/error.hpp"
#include "genz3d/prototypes.hpp"

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

}  // namespace

TEST(LoadPrototypes, ParsesRecords) {
  const auto set = prototypes::parse_prototypes("# comment\na 1 2 3 4 5\nb 0 0 0 0 1\nc -1 0.5 2 3 4\n");
  EXPECT_EQ(set.dim(), 5);
  EXPECT_EQ(set.size(), 3u);
  EXPECT_EQ(set.at("c")[1], 0.5);
}

TEST(LoadPrototypes, WrongDimensionNamesTheRow) {
  try {
    prototypes::parse_prototypes("a 1 2 3 4 5\nbad 1 2 3 4\n", "protos.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("bad"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

TEST(LoadPrototypes, RejectsDuplicatesAndNonFinite) {
  EXPECT_THROW(prototypes::parse_prototypes("a 1 2\na 3 4\n"), Error);
  EXPECT_THROW(prototypes::parse_prototypes("a 1 nan\n"), Error);
}

TEST(LoadPrototypes, SaveLoadRoundTrip) {
  prototypes::PrototypeSet set(3);
  set.add("x", vec({0.1, 1.0 / 3.0, -2e-9}));
  set.add("y", vec({4, 5, 6}));
  const auto path = (std::filesystem::temp_directory_path() / "genz3d-unit-protos.txt").string();
  prototypes::save_prototypes(path, set);
  EXPECT_TRUE(prototypes::load_prototypes(path) == set);
}

TEST(ConcatPrototypes, EmptyOperandReturnsOther) {
  prototypes::PrototypeSet a(2);
  a.add("x", vec({1, 2}));
  EXPECT_TRUE(prototypes::concat_prototypes(a, prototypes::PrototypeSet()) == a);
  EXPECT_TRUE(prototypes::concat_prototypes(prototypes::PrototypeSet(), a) == a);
}

TEST(ConcatPrototypes, DimensionsAddAndOrderMatters) {
  nn::Rng rng(1);
  prototypes::PrototypeSet a(300), b(300);
  for (const char* n : {"p", "q"}) {
    a.add(n, nn::gaussian_matrix(1, 300, rng).row(0).transpose());
    b.add(n, nn::gaussian_matrix(1, 300, rng).row(0).transpose());
  }
  const auto ab = prototypes::concat_prototypes(a, b);
  const auto ba = prototypes::concat_prototypes(b, a);
  EXPECT_EQ(ab.dim(), 600);
  EXPECT_EQ(ab.at("p").head(300), a.at("p"));
  EXPECT_EQ(ab.at("p").tail(300), b.at("p"));
  EXPECT_NE(ab.at("p"), ba.at("p"));
}

TEST(ConcatPrototypes, MismatchedClassSetsRejected) {
  prototypes::PrototypeSet a(1), b(1);
  a.add("x", vec({1}));
  b.add("y", vec({1}));
  EXPECT_THROW(prototypes::concat_prototypes(a, b), Error);
}

TEST(ImagePrototype, UnitVectorIsItself) {
  const Vector u = vec({0.6, 0.8});
  EXPECT_LT((prototypes::image_prototype({u}) - u).norm(), 1e-15);
}

TEST(ImagePrototype, TwoAxesGiveDiagonal) {
  const Vector p = prototypes::image_prototype({vec({1, 0}), vec({0, 1})});
  EXPECT_NEAR(p[0], 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(p[1], 1.0 / std::sqrt(2.0), 1e-15);
}

TEST(ImagePrototype, UnitNormForRandomInputs) {
  nn::Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    std::vector<Vector> vs;
    for (int i = 0; i < 5; ++i) vs.push_back(nn::gaussian_matrix(1, 7, rng).row(0).transpose() * (i + 1.0));
    EXPECT_NEAR(prototypes::image_prototype(vs).norm(), 1.0, 1e-12);
  }
  EXPECT_THROW(prototypes::image_prototype({}), std::exception);
}

TEST(L2Normalized, UnitRows) {
  prototypes::PrototypeSet s(2);
  s.add("a", vec({3, 4}));
  EXPECT_NEAR(prototypes::l2_normalized(s).at("a")[0], 0.6, 1e-15);
  prototypes::PrototypeSet z(2);
  z.add("z", vec({0, 0}));
  EXPECT_THROW(prototypes::l2_normalized(z), Error);
}

TEST(IdealPrototypes, PerfectPredictionsGiveClassMeans) {
  Matrix f(4, 2);
  f << 1, 0, 3, 0, 0, 2, 0, 4;
  const std::vector<int> labels{0, 0, 1, 1};
  const auto p = prototypes::ideal_prototypes(f, labels, labels, {0}, {1}, {"a", "b"});
  EXPECT_EQ(p.at("a"), vec({2, 0}));
  EXPECT_EQ(p.at("b"), vec({0, 3}));
}

TEST(IdealPrototypes, SinglePointUnseenClass) {
  Matrix f(3, 2);
  f << 1, 1, 2, 2, 7, 9;
  const auto p = prototypes::ideal_prototypes(f, {0, 0, 1}, {0, 0, 0}, {0}, {1}, {"a", "b"});
  EXPECT_EQ(p.at("b"), vec({7, 9}));
}

TEST(IdealPrototypes, MisclassifiedSeenPointIgnored) {
  Matrix f(4, 1);
  f << 1, 2, 3, 100;
  const auto p = prototypes::ideal_prototypes(f, {0, 0, 0, 0}, {0, 0, 0, 1}, {0}, {}, {"a", "b"});
  EXPECT_EQ(p.at("a")[0], 2.0);
}

TEST(AttributePrototypes, DeterministicAndCompositeSharesBase) {
  const auto roster = data::default_roster();
  const auto a = prototypes::attribute_prototypes(roster, 0.0, 0, 3);
  const auto b = prototypes::attribute_prototypes(roster, 0.0, 0, 3);
  EXPECT_TRUE(a == b);
  EXPECT_EQ(a.size(), roster.size());
  // ridden_box = box + rider: closer to box than to any other class.
  const Vector rb = a.at("ridden_box");
  double best = 1e9;
  std::string nearest;
  for (const auto& [name, v] : a.entries()) {
    if (name == "ridden_box") continue;
    if ((v - rb).norm() < best) {
      best = (v - rb).norm();
      nearest = name;
    }
  }
  EXPECT_EQ(nearest, "box");
  const auto noisy = prototypes::attribute_prototypes(roster, 0.05, 3, 3);
  EXPECT_EQ(noisy.dim(), a.dim() + 3);
}
