#pragma once

// Conditional feature generators G(z, t): noise plus a class prototype in,
// an artificial backbone feature out. GMMN is trained by matching real and
// generated per-class batches under a multi-bandwidth Gaussian MMD; the DAE
// variant is a denoising auto-encoder whose decoder is conditioned on the
// prototype and is fed pure noise at generation time.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "genz3d/checkpoint.hpp"
#include "genz3d/data.hpp"
#include "genz3d/nn.hpp"

namespace genz3d::generators {

enum class GeneratorKind { kGmmn, kDae };

std::string generator_name(GeneratorKind kind);
GeneratorKind parse_generator(const std::string& name);

struct GenConfig {
  int noise_dim = 32;  // Z
  int hidden = 128;
  std::vector<double> bandwidths{1, 2, 4, 8, 16};  // multiples of the median pairwise distance
  int epochs = 300;
  int batch_size = 64;
  double learning_rate = 1e-3;
  double dae_noise = 0.1;
  std::uint64_t seed = 1;

  void validate() const;
};

// Biased squared MMD summed over Gaussian kernels exp(-d^2 / (2 sigma^2)):
// mean k(X,X) + mean k(Y,Y) - 2 mean k(X,Y). Rows are samples.
double mmd_biased(const nn::Matrix& x, const nn::Matrix& y, std::span<const double> sigmas);

// Same value, plus d(mmd)/dX written to `grad_x`.
double mmd_biased_with_grad(const nn::Matrix& x, const nn::Matrix& y,
                            std::span<const double> sigmas, nn::Matrix& grad_x);

// Median Euclidean distance over distinct row pairs (at most `max_rows` rows,
// taken at an even stride). Returns 1 when fewer than two rows or all equal.
double median_pairwise_distance(const nn::Matrix& x, Eigen::Index max_rows = 512);

using FeaturesByClass = std::map<int, nn::Matrix>;
using PrototypesByClass = std::map<int, nn::Vector>;

struct Generator {
  GeneratorKind kind = GeneratorKind::kGmmn;
  int noise_dim = 0;
  int prototype_dim = 0;
  int feature_dim = 0;
  nn::Mlp net;      // GMMN: (Z + D) -> F. DAE: decoder (Z + D) -> F.
  nn::Mlp encoder;  // DAE only: F -> Z
  std::vector<double> sigmas;       // absolute kernel bandwidths (GMMN)
  std::vector<double> loss_trace;   // mean training loss per epoch

  bool trained() const { return !net.empty(); }
};

Generator train_gmmn(const FeaturesByClass& features, const PrototypesByClass& prototypes,
                     const GenConfig& config);
Generator train_dae(const FeaturesByClass& features, const PrototypesByClass& prototypes,
                    const GenConfig& config);
Generator train_generator(GeneratorKind kind, const FeaturesByClass& features,
                          const PrototypesByClass& prototypes, const GenConfig& config);

// n x F features from G(z, t), z ~ N(0, I). n = 0 gives an empty matrix.
nn::Matrix sample_features(const Generator& gen, const nn::Vector& prototype, int n,
                           std::uint64_t seed);

// DAE reconstruction decoder(encoder(x) || t) without corruption.
nn::Matrix dae_reconstruct(const Generator& gen, const nn::Matrix& x, const nn::Vector& prototype);

Checkpoint to_checkpoint(const Generator& gen);
Generator generator_from_checkpoint(const Checkpoint& ckpt);

enum class Setting { kZsl, kGzsl };

std::string setting_name(Setting s);
Setting parse_setting(const std::string& name);

enum class Provenance { kGenerated, kReal };

struct GeneratedSet {
  nn::Matrix features;
  std::vector<int> labels;
  std::vector<Provenance> provenance;

  std::size_t size() const { return labels.size(); }
  std::size_t count(Provenance p) const;
};

struct TrainsetOptions {
  int per_unseen_class = 500;   // classification
  std::int64_t budget = 0;      // segmentation total over all classes; 0 = seen total + unseen share
  std::uint64_t seed = 1;
};

// Per-unseen-class generation counts. Classification: per_unseen_class
// each. Segmentation: budget split proportionally to class frequency, where
// each unseen class is given the mean seen-class frequency.
std::map<int, std::int64_t> generation_counts(data::Task task,
                                              const std::map<int, std::int64_t>& seen_frequencies,
                                              const std::vector<int>& unseen,
                                              const TrainsetOptions& options);

// ZSL: generated unseen features only. GZSL: generated unseen plus every real
// seen feature once. `real_seen` may be null only in ZSL.
GeneratedSet build_classifier_trainset(Setting setting, const Generator& gen,
                                       const PrototypesByClass& unseen_prototypes,
                                       const FeaturesByClass* real_seen,
                                       const std::map<int, std::int64_t>& seen_frequencies,
                                       data::Task task, const TrainsetOptions& options);

}  // namespace genz3d::generators
