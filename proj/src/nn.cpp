#include "genz3d/nn.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace genz3d::nn {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t k) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gauss(rng);
  return m;
}

std::string activation_name(Activation act) {
  switch (act) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
  }
  return "identity";
}

Activation parse_activation(const std::string& name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

DenseLayer make_dense(int in, int out, Activation act, Rng& rng) {
  if (in <= 0 || out <= 0) throw std::invalid_argument("layer dims must be positive");
  const double limit = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  DenseLayer layer;
  layer.weights.resize(out, in);
  for (Eigen::Index i = 0; i < layer.weights.size(); ++i) layer.weights.data()[i] = dist(rng);
  layer.bias = Vector::Zero(out);
  layer.activation = act;
  return layer;
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.size() != l.weights.rows())
      throw std::invalid_argument("bias length must equal weight rows");
    if (i > 0 && layers_[i - 1].out_dim() != l.in_dim()) {
      std::ostringstream msg;
      msg << "layer " << i << " expects " << l.in_dim() << " inputs but layer " << i - 1
          << " emits " << layers_[i - 1].out_dim();
      throw std::invalid_argument(msg.str());
    }
  }
}

Mlp Mlp::create(std::span<const int> widths, Activation hidden, Activation output,
                Rng& rng) {
  if (widths.size() < 2) throw std::invalid_argument("an MLP needs at least two widths");
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    layers.push_back(make_dense(widths[i], widths[i + 1], last ? output : hidden, rng));
  }
  return Mlp(std::move(layers));
}

int Mlp::in_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
int Mlp::out_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weights.size() + l.bias.size();
  return n;
}

std::vector<std::span<double>> Mlp::parameters() {
  std::vector<std::span<double>> out;
  for (auto& l : layers_) {
    out.emplace_back(l.weights.data(), static_cast<std::size_t>(l.weights.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

std::vector<std::span<const double>> MlpGradients::spans() const {
  std::vector<std::span<const double>> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.emplace_back(weights[i].data(), static_cast<std::size_t>(weights[i].size()));
    out.emplace_back(bias[i].data(), static_cast<std::size_t>(bias[i].size()));
  }
  return out;
}

void MlpGradients::add(const MlpGradients& other) {
  if (weights.empty()) {
    *this = other;
    return;
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    weights[i] += other.weights[i];
    bias[i] += other.bias[i];
  }
}

Matrix apply_activation(Activation act, const Matrix& pre) {
  switch (act) {
    case Activation::kIdentity: return pre;
    case Activation::kRelu: return pre.cwiseMax(0.0);
    case Activation::kTanh: return pre.array().tanh().matrix();
  }
  return pre;
}

namespace {

// Derivative of the activation, evaluated from the pre-activation; relu has
// subgradient 0 at exactly 0.
Matrix activation_derivative(Activation act, const Matrix& pre) {
  switch (act) {
    case Activation::kIdentity: return Matrix::Ones(pre.rows(), pre.cols());
    case Activation::kRelu:
      return pre.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case Activation::kTanh: {
      Matrix t = pre.array().tanh().matrix();
      return (1.0 - t.array().square()).matrix();
    }
  }
  return Matrix::Ones(pre.rows(), pre.cols());
}

}  // namespace

Matrix mlp_forward(const Mlp& net, const Matrix& input, MlpCache* cache) {
  if (net.empty()) throw std::invalid_argument("mlp_forward: empty network");
  if (input.cols() != net.in_dim()) {
    std::ostringstream msg;
    msg << "mlp_forward: input has " << input.cols() << " columns, network expects "
        << net.in_dim();
    throw std::invalid_argument(msg.str());
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre_activation.clear();
  }
  Matrix x = input;
  for (const auto& layer : net.layers()) {
    Matrix pre = x * layer.weights.transpose();
    pre.rowwise() += layer.bias.transpose();
    Matrix out = apply_activation(layer.activation, pre);
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->pre_activation.push_back(std::move(pre));
    }
    x = std::move(out);
  }
  if (cache) cache->output = x;
  return x;
}

MlpGradients mlp_backward(const Mlp& net, const MlpCache& cache, const Matrix& grad_output) {
  if (cache.empty() || cache.inputs.size() != net.layers().size())
    throw std::invalid_argument("mlp_backward: missing or stale forward cache");
  if (grad_output.rows() != cache.output.rows() || grad_output.cols() != cache.output.cols())
    throw std::invalid_argument("mlp_backward: output gradient shape mismatch");

  const std::size_t n = net.layers().size();
  MlpGradients grads;
  grads.weights.resize(n);
  grads.bias.resize(n);
  Matrix g = grad_output;
  for (std::size_t k = n; k-- > 0;) {
    const auto& layer = net.layers()[k];
    Matrix dpre = g.cwiseProduct(activation_derivative(layer.activation, cache.pre_activation[k]));
    grads.weights[k] = dpre.transpose() * cache.inputs[k];
    grads.bias[k] = dpre.colwise().sum().transpose();
    g = dpre * layer.weights;
  }
  grads.input = std::move(g);
  return grads;
}

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    p.row(i) = (logits.row(i).array() - m).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

LossResult softmax_cross_entropy(const Matrix& logits, std::span<const int> targets,
                                 std::span<const double> class_weights) {
  const auto n = logits.rows();
  const auto c = logits.cols();
  if (static_cast<Eigen::Index>(targets.size()) != n)
    throw std::invalid_argument("softmax_cross_entropy: one target per row required");
  if (static_cast<Eigen::Index>(class_weights.size()) != c)
    throw std::invalid_argument("softmax_cross_entropy: one weight per class required");
  for (double w : class_weights)
    if (!(w > 0.0)) throw std::invalid_argument("softmax_cross_entropy: weights must be > 0");

  LossResult out;
  out.gradient.resize(n, c);
  if (n == 0) return out;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = targets[static_cast<std::size_t>(i)];
    if (y < 0 || y >= c) {
      std::ostringstream msg;
      msg << "softmax_cross_entropy: target " << y << " out of range [0, " << c << ")";
      throw std::invalid_argument(msg.str());
    }
    const double m = logits.row(i).maxCoeff();
    const auto shifted = (logits.row(i).array() - m).eval();
    const double log_z = std::log(shifted.exp().sum());
    const double w = class_weights[static_cast<std::size_t>(y)];
    total += w * (log_z - shifted(y));
    out.gradient.row(i) = (shifted - log_z).exp().matrix();
    out.gradient(i, y) -= 1.0;
    out.gradient.row(i) *= w / static_cast<double>(n);
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

LossResult mean_squared_error(const Matrix& output, const Matrix& target) {
  if (output.rows() != target.rows() || output.cols() != target.cols())
    throw std::invalid_argument("mean_squared_error: shape mismatch");
  LossResult out;
  const double n = std::max<double>(1.0, static_cast<double>(output.rows()));
  Matrix diff = output - target;
  out.loss = 0.5 * diff.squaredNorm() / n;
  out.gradient = diff / n;
  return out;
}

void adam_step(std::span<const std::span<double>> params,
               std::span<const std::span<const double>> grads, AdamState& state) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: parameter/gradient block count mismatch");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size())
    throw std::invalid_argument("adam_step: state does not match parameter blocks");
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size() || params[b].size() != state.first_moment[b].size())
      throw std::invalid_argument("adam_step: block shape mismatch");
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double g = grads[b][i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      params[b][i] -= state.learning_rate * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

double grad_check(const Mlp& net, const Matrix& input, const LossFn& loss,
                  const GradCheckOptions& options) {
  MlpCache cache;
  Matrix out = mlp_forward(net, input, &cache);
  const LossResult base = loss(out);
  const MlpGradients analytic = mlp_backward(net, cache, base.gradient);

  Mlp probe = net;
  const double h = options.step;
  auto eval = [&](const Mlp& m, const Matrix& x) { return loss(mlp_forward(m, x)).loss; };
  auto derivative = [&](const auto& f, double at) {
    if (!options.fourth_order) return (f(at + h) - f(at - h)) / (2.0 * h);
    return (f(at - 2 * h) - 8 * f(at - h) + 8 * f(at + h) - f(at + 2 * h)) / (12.0 * h);
  };

  double worst = 0.0;
  auto params = probe.parameters();
  const auto grad_spans = analytic.spans();
  for (std::size_t b = 0; b < params.size(); ++b) {
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double saved = params[b][i];
      const double numeric = derivative([&](double v) {
        params[b][i] = v;
        return eval(probe, input);
      }, saved);
      params[b][i] = saved;
      worst = std::max(worst, relative_error(grad_spans[b][i], numeric, options.floor));
    }
  }
  Matrix x = input;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    const double numeric = derivative([&](double v) {
      x.data()[i] = v;
      return eval(net, x);
    }, saved);
    x.data()[i] = saved;
    worst = std::max(worst, relative_error(analytic.input.data()[i], numeric, options.floor));
  }
  return worst;
}

}  // namespace genz3d::nn
