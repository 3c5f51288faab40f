#pragma once

// Class prototypes: one fixed real vector per class name. The only bridge
// between seen and unseen classes.

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "genz3d/backbone.hpp"
#include "genz3d/data.hpp"
#include "genz3d/nn.hpp"

namespace genz3d::prototypes {

class PrototypeSet {
 public:
  PrototypeSet() = default;
  explicit PrototypeSet(int dim) : dim_(dim) {}

  int dim() const { return dim_; }
  std::size_t size() const { return entries_.size(); }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  // Rejects duplicates, wrong dimension, and non-finite values.
  void add(const std::string& name, const nn::Vector& vec);
  const nn::Vector& at(const std::string& name) const;
  const std::vector<std::pair<std::string, nn::Vector>>& entries() const { return entries_; }
  std::set<std::string> names() const;

  // Rows follow `names`.
  nn::Matrix matrix(const std::vector<std::string>& names) const;

  bool operator==(const PrototypeSet& other) const;

 private:
  int dim_ = 0;
  std::vector<std::pair<std::string, nn::Vector>> entries_;
  std::map<std::string, std::size_t> index_;
};

// One record per line: class name then D whitespace-separated reals; `#`
// starts a comment line. D is inferred from the first record.
PrototypeSet parse_prototypes(const std::string& text, const std::string& source = "<memory>");
PrototypeSet load_prototypes(const std::string& path);
std::string serialize_prototypes(const PrototypeSet& set);
void save_prototypes(const std::string& path, const PrototypeSet& set);

// Per class: a || b. Class sets must match; order follows `a`. An empty
// zero-dimensional operand returns the other one.
PrototypeSet concat_prototypes(const PrototypeSet& a, const PrototypeSet& b);

// Scales every vector to unit l2 norm (zero vectors are rejected).
PrototypeSet l2_normalized(const PrototypeSet& set);

// Mean of the vectors scaled to unit l2 norm.
nn::Vector image_prototype(const std::vector<nn::Vector>& vectors);

// Upper-bound prototypes built from backbone features with ground truth:
// seen class -> mean feature over points whose prediction equals the label;
// unseen class -> mean feature over all of its points (predictions ignored).
// `labels` and `predictions` index rows of `features`; results are keyed by
// `class_names[id]`.
PrototypeSet ideal_prototypes(const nn::Matrix& features, const std::vector<int>& labels,
                              const std::vector<int>& predictions, const std::vector<int>& seen,
                              const std::vector<int>& unseen,
                              const std::vector<std::string>& class_names);

// Same, computing features with a trained backbone and predictions with its
// auxiliary classifier over every point (or cloud) of `dataset`.
PrototypeSet ideal_prototypes(const backbone::TrainedBackbone& trained, const data::Dataset& dataset,
                              const std::vector<int>& seen, const std::vector<int>& unseen);

// Stand-in for word embeddings on the synthetic roster: a vector of
// geometric attributes (flat, curved, pointed, ring, rider on top, ...) per
// class, perturbed by `noise` and padded with `extra_dims` random dims.
// Composites share their base's attributes. Deterministic in `seed`.
PrototypeSet attribute_prototypes(const std::vector<data::ClassSpec>& roster, double noise,
                                  int extra_dims, std::uint64_t seed);

}  // namespace genz3d::prototypes
