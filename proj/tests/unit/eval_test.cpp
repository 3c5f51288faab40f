#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "genz3d/eval.hpp"

using namespace genz3d;
using eval::ConfusionMatrix;

namespace {

ConfusionMatrix random_cm(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(1, 20);
  ConfusionMatrix cm(n);
  for (int t = 0; t < n; ++t)
    for (int p = 0; p < n; ++p) cm.add(t, p, d(rng));
  return cm;
}

}  // namespace

TEST(Confusion, EmptyInputLeavesZeros) {
  ConfusionMatrix cm(3);
  cm.accumulate({}, {});
  EXPECT_EQ(cm.total(), 0);
  EXPECT_THROW(eval::accuracies(cm), std::domain_error);
}

TEST(Confusion, PerfectPredictionsAreDiagonal) {
  ConfusionMatrix cm(3);
  const std::vector<int> y{0, 1, 2, 2, 1};
  cm.accumulate(y, y);
  EXPECT_EQ(cm.trace(), 5);
  EXPECT_EQ(cm.at(2, 2), 2);
  EXPECT_DOUBLE_EQ(eval::accuracies(cm).global, 1.0);
}

TEST(Confusion, RejectsBadInput) {
  ConfusionMatrix cm(2);
  EXPECT_THROW(cm.accumulate(std::vector<int>{0, 1}, std::vector<int>{0}), std::invalid_argument);
  EXPECT_THROW(cm.accumulate(std::vector<int>{2}, std::vector<int>{0}), std::out_of_range);
}

TEST(Confusion, MergeIsAssociativeAndMatchesConcatenation) {
  const auto a = random_cm(4, 1), b = random_cm(4, 2), c = random_cm(4, 3);
  ConfusionMatrix ab = a;
  ab.merge(b);
  ab.merge(c);
  ConfusionMatrix bc = b;
  bc.merge(c);
  ConfusionMatrix a_bc = a;
  a_bc.merge(bc);
  EXPECT_EQ(ab, a_bc);

  ConfusionMatrix split(2), whole(2);
  const std::vector<int> p{0, 1, 1, 0}, t{0, 0, 1, 1};
  split.accumulate(std::span(p).first(2), std::span(t).first(2));
  ConfusionMatrix rest(2);
  rest.accumulate(std::span(p).last(2), std::span(t).last(2));
  split.merge(rest);
  whole.accumulate(p, t);
  EXPECT_EQ(split, whole);
}

TEST(Iou, WorkedExample) {
  ConfusionMatrix cm(3);
  cm.add(0, 0, 2);  // TP 2
  cm.add(1, 0, 1);  // FP 1
  cm.add(0, 2, 1);  // FN 1
  EXPECT_DOUBLE_EQ(*eval::iou(cm, 0), 0.5);
}

TEST(Iou, UndefinedClassExcludedFromMean) {
  ConfusionMatrix cm(3);
  cm.add(0, 0, 1);
  cm.add(1, 1, 1);
  EXPECT_FALSE(eval::iou(cm, 2).has_value());
  const std::vector<int> all{0, 1, 2};
  EXPECT_DOUBLE_EQ(eval::miou(cm, all), 1.0);
  EXPECT_NEAR(eval::miou(cm, all, eval::IouConvention::kZero), 2.0 / 3.0, 1e-15);
  const std::vector<int> only{2};
  EXPECT_THROW(eval::miou(cm, only), std::domain_error);
  EXPECT_THROW(eval::miou(cm, std::vector<int>{}), std::invalid_argument);
}

TEST(Iou, MeanOfTwoClasses) {
  // Class 0: TP 1, FN 4 -> 0.2. Class 1: TP 4, FN 1 -> 0.8.
  ConfusionMatrix cm(3);
  cm.add(0, 0, 1);
  cm.add(0, 2, 4);
  cm.add(1, 1, 4);
  cm.add(1, 2, 1);
  ASSERT_NEAR(*eval::iou(cm, 0), 0.2, 1e-15);
  ASSERT_NEAR(*eval::iou(cm, 1), 0.8, 1e-15);
  EXPECT_NEAR(eval::miou(cm, std::vector<int>{0, 1}), 0.5, 1e-15);
}

TEST(Iou, AllIsClassWeightedCombinationOfSubsets) {
  const auto cm = random_cm(13, 7);
  std::vector<int> seen, unseen;
  for (int c = 0; c < 9; ++c) seen.push_back(c);
  for (int c = 9; c < 13; ++c) unseen.push_back(c);
  std::vector<std::string> names;
  for (int c = 0; c < 13; ++c) names.push_back("c" + std::to_string(c));
  const auto r = eval::make_report(cm, names, seen, unseen, true);
  ASSERT_TRUE(r.miou.has_value());
  EXPECT_NEAR(r.miou->all, (9.0 * r.miou->seen + 4.0 * r.miou->unseen) / 13.0, 1e-12);
  EXPECT_NEAR((9.0 * 53.1 + 4.0 * 7.3) / 13.0, 39.0, 0.05);
}

TEST(HarmonicMean, KnownValues) {
  EXPECT_NEAR(eval::harmonic_mean(48.8, 29.3), 36.6, 0.05);
  // Printed inputs are rounded to 1 d.p.; 12.9 lies inside the HM range they allow.
  EXPECT_NEAR(eval::harmonic_mean(53.1, 7.3), 12.84, 0.005);
  EXPECT_LE(eval::harmonic_mean(53.05, 7.25), 12.9);
  EXPECT_GE(eval::harmonic_mean(53.15, 7.35), 12.9);
  for (double x : {0.0, 0.1, 0.5, 1.0}) EXPECT_DOUBLE_EQ(eval::harmonic_mean(x, x), x);
  EXPECT_EQ(eval::harmonic_mean(0.0, 0.7), 0.0);
  EXPECT_EQ(eval::harmonic_mean(0.0, 0.0), 0.0);
}

TEST(HarmonicMean, BoundedByMinAndMean) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double s = u(rng), v = u(rng);
    const double h = eval::harmonic_mean(s, v);
    EXPECT_LE(h, 0.5 * (s + v) + 1e-15);
    EXPECT_GE(h, 0.0);
    EXPECT_LE(std::min(s, v), h + 1e-15);
  }
}

TEST(Accuracy, WorkedExample) {
  ConfusionMatrix cm(2);
  cm.add(0, 0, 3);
  cm.add(0, 1, 1);
  cm.add(1, 0, 2);
  cm.add(1, 1, 2);
  const auto a = eval::accuracies(cm);
  EXPECT_DOUBLE_EQ(a.global, 5.0 / 8.0);
  EXPECT_DOUBLE_EQ(a.class_mean, 0.625);
}

TEST(Accuracy, BalancedSetGlobalEqualsClassMean) {
  ConfusionMatrix cm(3);
  cm.add(0, 0, 7);
  cm.add(0, 1, 3);
  cm.add(1, 1, 4);
  cm.add(1, 2, 6);
  cm.add(2, 2, 10);
  const auto a = eval::accuracies(cm);
  EXPECT_NEAR(a.global, a.class_mean, 1e-15);
}

TEST(Accuracy, ClassWithoutSupportSkipped) {
  ConfusionMatrix cm(3);
  cm.add(0, 0, 1);
  cm.add(1, 0, 1);
  EXPECT_DOUBLE_EQ(eval::class_accuracy(cm, std::vector<int>{0, 1, 2}), 0.5);
}

TEST(Report, CsvRoundTrip) {
  const auto cm = random_cm(4, 11);
  auto r = eval::make_report(cm, {"a", "b", "c", "d"}, {0, 1}, {2, 3}, true);
  r.metadata["mode"] = "generative";
  const std::string csv = eval::render_report(r, eval::ReportFormat::kCsv);
  const auto back = eval::report_from_csv(csv);
  EXPECT_EQ(back.class_names, r.class_names);
  EXPECT_EQ(back.seen, r.seen);
  EXPECT_EQ(back.unseen, r.unseen);
  EXPECT_EQ(back.metadata, r.metadata);
  ASSERT_TRUE(back.miou.has_value());
  EXPECT_NEAR(back.miou->hm, r.miou->hm, 1e-5);
  EXPECT_NEAR(back.global_accuracy, r.global_accuracy, 1e-5);
  EXPECT_EQ(eval::render_report(back, eval::ReportFormat::kCsv), csv);
}

TEST(Report, TextHasSubsetColumns) {
  const auto cm = random_cm(3, 5);
  const auto r = eval::make_report(cm, {"a", "b", "c"}, {0, 1}, {2}, true);
  const std::string text = eval::render_report(r, eval::ReportFormat::kText);
  for (const char* col : {"S", "U", "All", "HM"}) EXPECT_NE(text.find(col), std::string::npos);
}

TEST(Report, EmptyUnseenGivesZeroHm) {
  const auto cm = random_cm(3, 6);
  const auto r = eval::make_report(cm, {"a", "b", "c"}, {0, 1, 2}, {}, false);
  ASSERT_TRUE(r.accuracy.has_value());
  EXPECT_EQ(r.accuracy->unseen, 0.0);
  EXPECT_EQ(r.accuracy->hm, 0.0);
  EXPECT_FALSE(r.miou.has_value());
}
