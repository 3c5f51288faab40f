#pragma once

// Confusion matrices and the metrics derived from them: global and mean
// per-class accuracy, per-class IoU, subset mIoU and seen/unseen harmonic
// means, plus text and CSV report rendering.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace genz3d::eval {

class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int num_classes);

  int num_classes() const { return n_; }
  std::int64_t at(int truth, int pred) const;
  std::int64_t row_sum(int c) const;
  std::int64_t col_sum(int c) const;
  std::int64_t total() const;
  std::int64_t trace() const;

  // Throws std::out_of_range on an unknown id, std::invalid_argument on
  // unequal lengths.
  void accumulate(std::span<const int> predictions, std::span<const int> truth);
  void add(int truth, int pred, std::int64_t count = 1);
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix& other) const = default;

 private:
  int n_ = 0;
  std::vector<std::int64_t> counts_;  // row-major, rows = truth
};

enum class IouConvention {
  kExcludeUndefined,  // zero-union classes are left out of means
  kZero,              // zero-union classes count as 0
};

// diag / (row + col - diag); nullopt when the union is empty.
std::optional<double> iou(const ConfusionMatrix& cm, int c);

// Unweighted mean of IoUs over `subset`. Throws std::invalid_argument on an
// empty subset and std::domain_error when no IoU in it is defined.
double miou(const ConfusionMatrix& cm, std::span<const int> subset,
            IouConvention convention = IouConvention::kExcludeUndefined);

// 2su / (s + u), 0 when s + u = 0.
double harmonic_mean(double s, double u);

struct Accuracies {
  double global = 0.0;
  double class_mean = 0.0;
};

// Throws std::domain_error on an empty matrix.
Accuracies accuracies(const ConfusionMatrix& cm);

// Mean recall over the rows of `subset` that have support.
double class_accuracy(const ConfusionMatrix& cm, std::span<const int> subset);

struct SubsetMetrics {
  double seen = 0.0;
  double unseen = 0.0;
  double all = 0.0;
  double hm = 0.0;
};

struct MetricsReport {
  std::vector<std::string> class_names;
  std::vector<int> seen;
  std::vector<int> unseen;
  std::vector<std::optional<double>> class_iou;
  std::vector<std::optional<double>> class_accuracy;  // nullopt without support
  double global_accuracy = 0.0;
  double mean_class_accuracy = 0.0;
  std::optional<SubsetMetrics> miou;      // segmentation
  std::optional<SubsetMetrics> accuracy;  // per-class accuracy by subset
  std::map<std::string, std::string> metadata;
};

// Subset metrics are computed for whichever of seen/unseen are non-empty;
// with an empty subset its entry is 0 and HM is 0.
MetricsReport make_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names,
                          const std::vector<int>& seen, const std::vector<int>& unseen,
                          bool segmentation,
                          IouConvention convention = IouConvention::kExcludeUndefined);

enum class ReportFormat { kText, kCsv };

std::string render_report(const MetricsReport& report, ReportFormat format);

struct CsvRow {
  std::string metric;
  std::string cls;
  std::string subset;
  std::string value;
};

std::vector<CsvRow> parse_report_csv(const std::string& text);

// Inverse of the CSV rendering (values keep their printed precision).
MetricsReport report_from_csv(const std::string& text);

}  // namespace genz3d::eval
