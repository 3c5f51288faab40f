#include "genz3d/prototypes.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "genz3d/checkpoint.hpp"
#include "genz3d/error.hpp"

namespace genz3d::prototypes {

void PrototypeSet::add(const std::string& name, const nn::Vector& vec) {
  if (name.empty()) throw Error(ErrorKind::kData, "prototype class name is empty");
  if (index_.count(name)) throw Error(ErrorKind::kData, "duplicate prototype for class '" + name + "'");
  if (vec.size() != dim_) {
    std::ostringstream msg;
    msg << "prototype '" << name << "' has " << vec.size() << " values, expected " << dim_;
    throw Error(ErrorKind::kData, msg.str());
  }
  if (!vec.allFinite()) throw Error(ErrorKind::kData, "prototype '" + name + "' is not finite");
  index_[name] = entries_.size();
  entries_.emplace_back(name, vec);
}

const nn::Vector& PrototypeSet::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::kConfig, "no prototype for class '" + name + "'");
  return entries_[it->second].second;
}

std::set<std::string> PrototypeSet::names() const {
  std::set<std::string> out;
  for (const auto& [n, v] : entries_) out.insert(n);
  return out;
}

nn::Matrix PrototypeSet::matrix(const std::vector<std::string>& names) const {
  nn::Matrix m(static_cast<Eigen::Index>(names.size()), dim_);
  for (std::size_t i = 0; i < names.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = at(names[i]).transpose();
  return m;
}

bool PrototypeSet::operator==(const PrototypeSet& other) const {
  if (dim_ != other.dim_ || entries_.size() != other.entries_.size()) return false;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].first != other.entries_[i].first) return false;
    if (entries_[i].second != other.entries_[i].second) return false;
  }
  return true;
}

PrototypeSet parse_prototypes(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  PrototypeSet set;
  bool first = true;
  while (std::getline(in, line)) {
    ++lineno;
    const auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    std::vector<double> values;
    for (std::string tok; ls >> tok;) {
      double v = 0.0;
      try {
        v = parse_real(tok);
      } catch (const std::invalid_argument&) {
        throw Error(ErrorKind::kData, source + ":" + std::to_string(lineno) + ": malformed value '" + tok + "'");
      }
      if (!std::isfinite(v))
        throw Error(ErrorKind::kData, source + ":" + std::to_string(lineno) + ": non-finite value in '" + name + "'");
      values.push_back(v);
    }
    if (first) {
      set = PrototypeSet(static_cast<int>(values.size()));
      first = false;
    }
    if (static_cast<int>(values.size()) != set.dim()) {
      std::ostringstream msg;
      msg << source << ":" << lineno << ": row '" << name << "' has " << values.size()
          << " values, expected " << set.dim();
      throw Error(ErrorKind::kData, msg.str());
    }
    if (set.contains(name))
      throw Error(ErrorKind::kData, source + ":" + std::to_string(lineno) + ": duplicate class '" + name + "'");
    set.add(name, Eigen::Map<const nn::Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
  }
  return set;
}

PrototypeSet load_prototypes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kData, "cannot open prototype file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_prototypes(buf.str(), path);
}

std::string serialize_prototypes(const PrototypeSet& set) {
  std::ostringstream out;
  for (const auto& [name, vec] : set.entries()) {
    out << name;
    for (Eigen::Index i = 0; i < vec.size(); ++i) out << ' ' << format_real(vec[i]);
    out << '\n';
  }
  return out.str();
}

void save_prototypes(const std::string& path, const PrototypeSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kData, "cannot write prototype file '" + path + "'");
  out << serialize_prototypes(set);
}

PrototypeSet concat_prototypes(const PrototypeSet& a, const PrototypeSet& b) {
  if (a.size() == 0 && a.dim() == 0) return b;
  if (b.size() == 0 && b.dim() == 0) return a;
  if (a.names() != b.names()) {
    std::ostringstream msg;
    msg << "prototype class sets differ:";
    for (const auto& n : a.names())
      if (!b.contains(n)) msg << " only-in-first=" << n;
    for (const auto& n : b.names())
      if (!a.contains(n)) msg << " only-in-second=" << n;
    throw Error(ErrorKind::kData, msg.str());
  }
  PrototypeSet out(a.dim() + b.dim());
  for (const auto& [name, va] : a.entries()) {
    nn::Vector v(a.dim() + b.dim());
    v << va, b.at(name);
    out.add(name, v);
  }
  return out;
}

PrototypeSet l2_normalized(const PrototypeSet& set) {
  PrototypeSet out(set.dim());
  for (const auto& [name, v] : set.entries()) {
    const double n = v.norm();
    if (!(n > 0)) throw Error(ErrorKind::kData, "cannot normalize zero prototype '" + name + "'");
    out.add(name, v / n);
  }
  return out;
}

nn::Vector image_prototype(const std::vector<nn::Vector>& vectors) {
  if (vectors.empty()) throw Error(ErrorKind::kData, "image prototype needs at least one vector");
  const Eigen::Index dim = vectors.front().size();
  nn::Vector mean = nn::Vector::Zero(dim);
  for (const auto& v : vectors) {
    if (v.size() != dim) throw Error(ErrorKind::kData, "image feature vectors differ in dimension");
    mean += v;
  }
  mean /= static_cast<double>(vectors.size());
  const double n = mean.norm();
  if (!(n > 0)) throw Error(ErrorKind::kData, "mean image feature is zero; l2 normalization undefined");
  return mean / n;
}

PrototypeSet ideal_prototypes(const nn::Matrix& features, const std::vector<int>& labels,
                              const std::vector<int>& predictions, const std::vector<int>& seen,
                              const std::vector<int>& unseen,
                              const std::vector<std::string>& class_names) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows() ||
      predictions.size() != labels.size())
    throw Error(ErrorKind::kData, "ideal prototypes: features, labels, predictions must align");
  PrototypeSet out(static_cast<int>(features.cols()));
  auto accumulate = [&](int cls, bool require_correct) {
    nn::Vector sum = nn::Vector::Zero(features.cols());
    std::size_t count = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] != cls) continue;
      if (require_correct && predictions[i] != cls) continue;
      sum += features.row(static_cast<Eigen::Index>(i)).transpose();
      ++count;
    }
    const std::string& name = class_names.at(static_cast<std::size_t>(cls));
    if (count == 0) {
      throw Error(ErrorKind::kData,
                  require_correct ? "seen class '" + name + "' has no correctly classified point"
                                  : "unseen class '" + name + "' has no point");
    }
    out.add(name, sum / static_cast<double>(count));
  };
  for (int c : seen) accumulate(c, true);
  for (int c : unseen) accumulate(c, false);
  return out;
}

PrototypeSet ideal_prototypes(const backbone::TrainedBackbone& trained, const data::Dataset& dataset,
                              const std::vector<int>& seen, const std::vector<int>& unseen) {
  const auto& model = trained.model;
  std::vector<nn::Matrix> blocks;
  std::vector<int> labels;
  Eigen::Index rows = 0;
  for (const auto& scene : dataset.scenes) {
    if (model.mode == backbone::Mode::kSegmentation) {
      blocks.push_back(backbone::extract_point_features(model, scene.points));
      labels.insert(labels.end(), scene.labels.begin(), scene.labels.end());
    } else {
      blocks.push_back(backbone::extract_global_feature(model, scene.points).transpose());
      labels.push_back(scene.cloud_label());
    }
    rows += blocks.back().rows();
  }
  nn::Matrix features(rows, model.feature_dim());
  Eigen::Index r = 0;
  for (const auto& b : blocks) {
    features.middleRows(r, b.rows()) = b;
    r += b.rows();
  }
  const nn::Matrix probs = backbone::aux_probabilities(trained, features);
  std::vector<int> predictions(labels.size());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    probs.row(i).maxCoeff(&best);
    predictions[static_cast<std::size_t>(i)] = trained.aux_classes[static_cast<std::size_t>(best)];
  }
  return ideal_prototypes(features, labels, predictions, seen, unseen, dataset.class_names);
}

namespace {

enum Attribute {
  kFlat, kHorizontal, kVertical, kCurved, kDoublyCurved, kSinglyCurved, kPointed,
  kEdged, kRing, kTall, kWide, kStructural, kRider, kAttributeCount
};

nn::Vector family_attributes(data::ShapeFamily f) {
  nn::Vector a = nn::Vector::Zero(kAttributeCount);
  switch (f) {
    case data::ShapeFamily::kPlane:
      a[kFlat] = 1; a[kHorizontal] = 1; a[kWide] = 1; a[kStructural] = 1;
      break;
    case data::ShapeFamily::kWall:
      a[kFlat] = 1; a[kVertical] = 1; a[kTall] = 0.7; a[kWide] = 1; a[kStructural] = 1;
      break;
    case data::ShapeFamily::kSphere:
      a[kCurved] = 1; a[kDoublyCurved] = 1;
      break;
    case data::ShapeFamily::kBox:
      a[kFlat] = 1; a[kEdged] = 1; a[kHorizontal] = 0.5; a[kVertical] = 0.5;
      break;
    case data::ShapeFamily::kCylinder:
      a[kCurved] = 1; a[kSinglyCurved] = 1; a[kVertical] = 0.5; a[kTall] = 1; a[kFlat] = 0.3;
      break;
    case data::ShapeFamily::kCone:
      a[kCurved] = 1; a[kSinglyCurved] = 0.6; a[kPointed] = 1; a[kTall] = 0.6;
      break;
    case data::ShapeFamily::kTorus:
      a[kCurved] = 1; a[kDoublyCurved] = 0.7; a[kRing] = 1; a[kHorizontal] = 0.8; a[kFlat] = 0.3;
      break;
  }
  return a;
}

}  // namespace

PrototypeSet attribute_prototypes(const std::vector<data::ClassSpec>& roster, double noise,
                                  int extra_dims, std::uint64_t seed) {
  if (extra_dims < 0 || !(noise >= 0)) throw Error(ErrorKind::kConfig, "invalid prototype noise settings");
  nn::Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  PrototypeSet out(kAttributeCount + extra_dims);
  for (const auto& spec : roster) {
    nn::Vector a = family_attributes(spec.base);
    if (spec.rider) {
      a += 0.5 * family_attributes(*spec.rider);
      a[kRider] = 1;
      a = a.cwiseMin(1.0);
    }
    nn::Vector v(kAttributeCount + extra_dims);
    for (int i = 0; i < kAttributeCount; ++i) v[i] = a[i] + noise * gauss(rng);
    for (int i = 0; i < extra_dims; ++i) v[kAttributeCount + i] = gauss(rng) * 0.3;
    out.add(spec.name, v);
  }
  return out;
}

}  // namespace genz3d::prototypes
