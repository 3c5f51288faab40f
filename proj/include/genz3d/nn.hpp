#pragma once

// Dense neural-network substrate: MLPs with hand-written backprop, softmax
// cross-entropy, Adam, and a finite-difference gradient checker.
//
// Batches are row-major matrices with one sample per row. A layer computes
// act(input * W^T + b) with W stored as (out x in).

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace genz3d::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Rng = std::mt19937_64;

// Independent stream seed for sub-task `k` of a run seeded with `seed`
// (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k);

// Standard-normal matrix drawn row by row.
Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng);

enum class Activation { kIdentity, kRelu, kTanh };

std::string activation_name(Activation act);
Activation parse_activation(const std::string& name);

struct DenseLayer {
  Matrix weights;  // out x in
  Vector bias;     // out
  Activation activation = Activation::kIdentity;

  int in_dim() const { return static_cast<int>(weights.cols()); }
  int out_dim() const { return static_cast<int>(weights.rows()); }
};

// Glorot-uniform weights in +-sqrt(6 / (in + out)), zero bias.
DenseLayer make_dense(int in, int out, Activation act, Rng& rng);

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers);

  // widths = {in, h1, ..., out}; hidden layers use `hidden`, last uses `output`.
  static Mlp create(std::span<const int> widths, Activation hidden,
                    Activation output, Rng& rng);

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  bool empty() const { return layers_.empty(); }
  int in_dim() const;
  int out_dim() const;
  std::size_t parameter_count() const;

  // Flat views over every weight and bias block, in layer order.
  std::vector<std::span<double>> parameters();

 private:
  std::vector<DenseLayer> layers_;
};

struct MlpCache {
  std::vector<Matrix> inputs;          // input fed to each layer
  std::vector<Matrix> pre_activation;  // per layer
  Matrix output;

  bool empty() const { return inputs.empty(); }
};

struct MlpGradients {
  std::vector<Matrix> weights;
  std::vector<Vector> bias;
  Matrix input;

  // Same ordering as Mlp::parameters().
  std::vector<std::span<const double>> spans() const;
  void add(const MlpGradients& other);
};

Matrix apply_activation(Activation act, const Matrix& pre);

Matrix mlp_forward(const Mlp& net, const Matrix& input, MlpCache* cache = nullptr);
MlpGradients mlp_backward(const Mlp& net, const MlpCache& cache,
                          const Matrix& grad_output);

struct LossResult {
  double loss = 0.0;
  Matrix gradient;
};

// Row-wise numerically stable softmax.
Matrix softmax(const Matrix& logits);

// loss = (1/N) sum_i w[y_i] * -log softmax(logits_i)[y_i].
LossResult softmax_cross_entropy(const Matrix& logits, std::span<const int> targets,
                                 std::span<const double> class_weights);

// loss = 0.5 * sum (output - target)^2 / N.
LossResult mean_squared_error(const Matrix& output, const Matrix& target);

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state);

using LossFn = std::function<LossResult(const Matrix& output)>;

struct GradCheckOptions {
  double step = 1e-5;
  double floor = 1e-6;
  bool fourth_order = false;  // five-point stencil instead of central differences
};

// Max over parameters (and inputs) of |analytic - numeric| /
// max(|analytic|, |numeric|, floor), with central (or five-point) differences.
double grad_check(const Mlp& net, const Matrix& input, const LossFn& loss,
                  const GradCheckOptions& options = {});

double relative_error(double analytic, double numeric, double floor);

}  // namespace genz3d::nn
