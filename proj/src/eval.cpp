#include "genz3d/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace genz3d::eval {

ConfusionMatrix::ConfusionMatrix(int num_classes) : n_(num_classes) {
  if (num_classes < 1) throw std::invalid_argument("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(n_) * static_cast<std::size_t>(n_), 0);
}

std::int64_t ConfusionMatrix::at(int truth, int pred) const {
  if (truth < 0 || truth >= n_ || pred < 0 || pred >= n_) throw std::out_of_range("class id out of range");
  return counts_[static_cast<std::size_t>(truth * n_ + pred)];
}

std::int64_t ConfusionMatrix::row_sum(int c) const {
  std::int64_t s = 0;
  for (int j = 0; j < n_; ++j) s += at(c, j);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int c) const {
  std::int64_t s = 0;
  for (int i = 0; i < n_; ++i) s += at(i, c);
  return s;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t s = 0;
  for (auto v : counts_) s += v;
  return s;
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t s = 0;
  for (int c = 0; c < n_; ++c) s += at(c, c);
  return s;
}

void ConfusionMatrix::add(int truth, int pred, std::int64_t count) {
  if (truth < 0 || truth >= n_ || pred < 0 || pred >= n_) {
    std::ostringstream msg;
    msg << "class id out of range: truth " << truth << ", prediction " << pred << " (classes: " << n_ << ")";
    throw std::out_of_range(msg.str());
  }
  counts_[static_cast<std::size_t>(truth * n_ + pred)] += count;
}

void ConfusionMatrix::accumulate(std::span<const int> predictions, std::span<const int> truth) {
  if (predictions.size() != truth.size()) throw std::invalid_argument("predictions and ground truth differ in length");
  for (int v : predictions)
    if (v < 0 || v >= n_) throw std::out_of_range("prediction id out of range");
  for (int v : truth)
    if (v < 0 || v >= n_) throw std::out_of_range("ground-truth id out of range");
  for (std::size_t i = 0; i < truth.size(); ++i) add(truth[i], predictions[i]);
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_ != n_) throw std::invalid_argument("cannot merge confusion matrices of different size");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

std::optional<double> iou(const ConfusionMatrix& cm, int c) {
  const std::int64_t tp = cm.at(c, c);
  const std::int64_t uni = cm.row_sum(c) + cm.col_sum(c) - tp;
  if (uni == 0) return std::nullopt;
  return static_cast<double>(tp) / static_cast<double>(uni);
}

double miou(const ConfusionMatrix& cm, std::span<const int> subset, IouConvention convention) {
  if (subset.empty()) throw std::invalid_argument("mIoU over an empty class subset");
  double sum = 0.0;
  int defined = 0;
  for (int c : subset) {
    const auto v = iou(cm, c);
    if (v) {
      sum += *v;
      ++defined;
    } else if (convention == IouConvention::kZero) {
      ++defined;
    }
  }
  if (defined == 0) throw std::domain_error("every IoU in the subset is undefined");
  return sum / defined;
}

double harmonic_mean(double s, double u) {
  if (s + u == 0.0) return 0.0;
  return 2.0 * s * u / (s + u);
}

Accuracies accuracies(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw std::domain_error("accuracies of an empty confusion matrix");
  std::vector<int> all(static_cast<std::size_t>(cm.num_classes()));
  for (int c = 0; c < cm.num_classes(); ++c) all[static_cast<std::size_t>(c)] = c;
  return {static_cast<double>(cm.trace()) / static_cast<double>(cm.total()), class_accuracy(cm, all)};
}

double class_accuracy(const ConfusionMatrix& cm, std::span<const int> subset) {
  double sum = 0.0;
  int rows = 0;
  for (int c : subset) {
    const std::int64_t support = cm.row_sum(c);
    if (support == 0) continue;
    sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(support);
    ++rows;
  }
  return rows ? sum / rows : 0.0;
}

namespace {

SubsetMetrics subset_metrics(const std::vector<int>& seen, const std::vector<int>& unseen,
                             const std::function<double(std::span<const int>)>& measure) {
  SubsetMetrics m;
  if (!seen.empty()) m.seen = measure(seen);
  if (!unseen.empty()) m.unseen = measure(unseen);
  std::vector<int> all = seen;
  all.insert(all.end(), unseen.begin(), unseen.end());
  std::sort(all.begin(), all.end());
  if (!all.empty()) m.all = measure(all);
  m.hm = (!seen.empty() && !unseen.empty()) ? harmonic_mean(m.seen, m.unseen) : 0.0;
  return m;
}

std::string subset_of(const MetricsReport& r, int c) {
  if (std::find(r.seen.begin(), r.seen.end(), c) != r.seen.end()) return "seen";
  if (std::find(r.unseen.begin(), r.unseen.end(), c) != r.unseen.end()) return "unseen";
  return "-";
}

std::string g6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * v);
  return buf;
}

std::string csv_safe(std::string s) {
  std::replace(s.begin(), s.end(), ',', ';');
  std::replace(s.begin(), s.end(), '\n', ' ');
  return s;
}

}  // namespace

MetricsReport make_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names,
                          const std::vector<int>& seen, const std::vector<int>& unseen,
                          bool segmentation, IouConvention convention) {
  if (static_cast<int>(class_names.size()) != cm.num_classes())
    throw std::invalid_argument("class names do not match the confusion matrix");
  MetricsReport r;
  r.class_names = class_names;
  r.seen = seen;
  r.unseen = unseen;
  for (int c = 0; c < cm.num_classes(); ++c) {
    r.class_iou.push_back(iou(cm, c));
    const std::int64_t support = cm.row_sum(c);
    r.class_accuracy.push_back(support ? std::optional<double>(static_cast<double>(cm.at(c, c)) /
                                                               static_cast<double>(support))
                                       : std::nullopt);
  }
  const Accuracies acc = accuracies(cm);
  r.global_accuracy = acc.global;
  r.mean_class_accuracy = acc.class_mean;
  r.accuracy = subset_metrics(seen, unseen, [&](std::span<const int> s) { return class_accuracy(cm, s); });
  if (segmentation) {
    r.miou = subset_metrics(seen, unseen, [&](std::span<const int> s) {
      bool any = convention == IouConvention::kZero;
      for (int c : s) any = any || iou(cm, c).has_value();
      return any ? miou(cm, s, convention) : 0.0;
    });
  }
  return r;
}

std::string render_report(const MetricsReport& r, ReportFormat format) {
  std::ostringstream out;
  if (format == ReportFormat::kCsv) {
    out << "metric,class,subset,value\n";
    for (const auto& [k, v] : r.metadata) out << "meta," << csv_safe(k) << ",," << csv_safe(v) << '\n';
    out << "global_accuracy,,all," << g6(r.global_accuracy) << '\n';
    out << "mean_class_accuracy,,all," << g6(r.mean_class_accuracy) << '\n';
    auto subsets = [&](const char* name, const SubsetMetrics& m) {
      out << name << ",,seen," << g6(m.seen) << '\n';
      out << name << ",,unseen," << g6(m.unseen) << '\n';
      out << name << ",,all," << g6(m.all) << '\n';
      out << name << ",,hm," << g6(m.hm) << '\n';
    };
    if (r.accuracy) subsets("class_accuracy", *r.accuracy);
    if (r.miou) subsets("miou", *r.miou);
    for (std::size_t c = 0; c < r.class_names.size(); ++c) {
      const std::string sub = subset_of(r, static_cast<int>(c));
      const auto& a = r.class_accuracy[c];
      out << "accuracy," << r.class_names[c] << ',' << sub << ',' << (a ? g6(*a) : "undefined") << '\n';
      if (r.miou) {
        const auto& i = r.class_iou[c];
        out << "iou," << r.class_names[c] << ',' << sub << ',' << (i ? g6(*i) : "undefined") << '\n';
      }
    }
    return out.str();
  }

  for (const auto& [k, v] : r.metadata) out << k << ": " << v << '\n';
  if (!r.metadata.empty()) out << '\n';
  out << std::left << std::setw(14) << "metric" << std::right << std::setw(8) << "S" << std::setw(8) << "U"
      << std::setw(8) << "All" << std::setw(8) << "HM" << '\n';
  auto row = [&](const char* name, const SubsetMetrics& m) {
    out << std::left << std::setw(14) << name << std::right << std::setw(8) << pct(m.seen) << std::setw(8)
        << pct(m.unseen) << std::setw(8) << pct(m.all) << std::setw(8) << pct(m.hm) << '\n';
  };
  if (r.miou) row("mIoU", *r.miou);
  if (r.accuracy) row("class acc", *r.accuracy);
  out << "\nglobal accuracy      " << pct(r.global_accuracy) << '\n';
  out << "mean class accuracy  " << pct(r.mean_class_accuracy) << "\n\n";
  out << std::left << std::setw(16) << "class" << std::setw(8) << "subset" << std::right << std::setw(8) << "Acc";
  if (r.miou) out << std::setw(8) << "IoU";
  out << '\n';
  for (std::size_t c = 0; c < r.class_names.size(); ++c) {
    const auto& a = r.class_accuracy[c];
    out << std::left << std::setw(16) << r.class_names[c] << std::setw(8) << subset_of(r, static_cast<int>(c))
        << std::right << std::setw(8) << (a ? pct(*a) : "-");
    if (r.miou) {
      const auto& i = r.class_iou[c];
      out << std::setw(8) << (i ? pct(*i) : "-");
    }
    out << '\n';
  }
  return out.str();
}

std::vector<CsvRow> parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<CsvRow> rows;
  bool header = true;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (header) {
      if (line != "metric,class,subset,value") throw std::invalid_argument("unexpected report CSV header");
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 4)
      throw std::invalid_argument("report CSV line " + std::to_string(lineno) + " does not have 4 fields");
    rows.push_back({cells[0], cells[1], cells[2], cells[3]});
  }
  return rows;
}

MetricsReport report_from_csv(const std::string& text) {
  MetricsReport r;
  auto number = [](const std::string& v) -> std::optional<double> {
    if (v == "undefined") return std::nullopt;
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("bad report value '" + v + "'");
    return x;
  };
  auto set_subset = [](SubsetMetrics& m, const std::string& subset, double v) {
    if (subset == "seen") {
      m.seen = v;
    } else if (subset == "unseen") {
      m.unseen = v;
    } else if (subset == "all") {
      m.all = v;
    } else if (subset == "hm") {
      m.hm = v;
    } else {
      throw std::invalid_argument("unknown subset '" + subset + "'");
    }
  };
  auto class_index = [&](const std::string& name, const std::string& subset) {
    auto it = std::find(r.class_names.begin(), r.class_names.end(), name);
    if (it != r.class_names.end()) return static_cast<std::size_t>(it - r.class_names.begin());
    const int id = static_cast<int>(r.class_names.size());
    r.class_names.push_back(name);
    r.class_accuracy.emplace_back();
    r.class_iou.emplace_back();
    if (subset == "seen") r.seen.push_back(id);
    if (subset == "unseen") r.unseen.push_back(id);
    return static_cast<std::size_t>(id);
  };
  for (const CsvRow& row : parse_report_csv(text)) {
    if (row.metric == "meta") {
      r.metadata[row.cls] = row.value;
    } else if (row.metric == "global_accuracy") {
      r.global_accuracy = number(row.value).value_or(0.0);
    } else if (row.metric == "mean_class_accuracy") {
      r.mean_class_accuracy = number(row.value).value_or(0.0);
    } else if (row.metric == "class_accuracy") {
      if (!r.accuracy) r.accuracy.emplace();
      set_subset(*r.accuracy, row.subset, number(row.value).value_or(0.0));
    } else if (row.metric == "miou") {
      if (!r.miou) r.miou.emplace();
      set_subset(*r.miou, row.subset, number(row.value).value_or(0.0));
    } else if (row.metric == "accuracy") {
      r.class_accuracy[class_index(row.cls, row.subset)] = number(row.value);
    } else if (row.metric == "iou") {
      r.class_iou[class_index(row.cls, row.subset)] = number(row.value);
    } else {
      throw std::invalid_argument("unknown report metric '" + row.metric + "'");
    }
  }
  return r;
}

}  // namespace genz3d::eval
