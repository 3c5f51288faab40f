#include "genz3d/checkpoint.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "genz3d/error.hpp"

namespace genz3d {

namespace {

Error ckpt_error(const std::string& source, int line, const std::string& what) {
  std::ostringstream msg;
  msg << source << ":" << line << ": " << what;
  return Error(ErrorKind::kData, msg.str());
}

}  // namespace

const nn::Mlp& Checkpoint::net(const std::string& name) const {
  for (const auto& [n, m] : nets)
    if (n == name) return m;
  throw Error(ErrorKind::kData, "checkpoint of kind '" + kind + "' has no network '" + name + "'");
}

bool Checkpoint::has_net(const std::string& name) const {
  for (const auto& [n, m] : nets)
    if (n == name) return true;
  return false;
}

const std::string& Checkpoint::require_meta(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end())
    throw Error(ErrorKind::kData, "checkpoint of kind '" + kind + "' lacks meta '" + key + "'");
  return it->second;
}

std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_real(const std::string& token) {
  double v = 0.0;
  const char* first = token.data();
  const char* last = token.data() + token.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    throw std::invalid_argument("not a real number: '" + token + "'");
  return v;
}

std::string join_reals(const std::vector<double>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += format_real(values[i]);
  }
  return out;
}

std::vector<double> split_reals(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (!tok.empty()) out.push_back(parse_real(tok));
  }
  return out;
}

std::string join_ints(const std::vector<int>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::vector<int> split_ints(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::ostringstream out;
  out << kCheckpointMagic << '\n';
  out << "kind " << ckpt.kind << '\n';
  for (const auto& [k, v] : ckpt.meta) out << "meta " << k << ' ' << v << '\n';
  for (const auto& [name, net] : ckpt.nets) {
    out << "mlp " << name << ' ' << net.layers().size() << '\n';
    for (const auto& layer : net.layers()) {
      out << "layer " << layer.in_dim() << ' ' << layer.out_dim() << ' '
          << nn::activation_name(layer.activation) << '\n';
      out << 'w';
      for (Eigen::Index i = 0; i < layer.weights.size(); ++i)
        out << ' ' << format_real(layer.weights.data()[i]);
      out << "\nb";
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) out << ' ' << format_real(layer.bias[i]);
      out << '\n';
    }
  }
  out << "end\n";
  return out.str();
}

Checkpoint parse_checkpoint(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto next = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++lineno;
    return true;
  };
  if (!next() || line != kCheckpointMagic)
    throw ckpt_error(source, 1, "missing magic '" + std::string(kCheckpointMagic) + "'");

  Checkpoint ckpt;
  bool ended = false;
  while (next()) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "kind") {
      ls >> ckpt.kind;
    } else if (tag == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ckpt.meta[key] = value;
    } else if (tag == "mlp") {
      std::string name;
      std::size_t count = 0;
      if (!(ls >> name >> count)) throw ckpt_error(source, lineno, "malformed mlp header");
      std::vector<nn::DenseLayer> layers;
      for (std::size_t k = 0; k < count; ++k) {
        if (!next()) throw ckpt_error(source, lineno, "truncated layer list");
        std::istringstream hs(line);
        std::string ltag, act;
        int in_dim = 0, out_dim = 0;
        if (!(hs >> ltag >> in_dim >> out_dim >> act) || ltag != "layer" || in_dim <= 0 ||
            out_dim <= 0)
          throw ckpt_error(source, lineno, "malformed layer header");
        nn::DenseLayer layer;
        try {
          layer.activation = nn::parse_activation(act);
        } catch (const std::invalid_argument& e) {
          throw ckpt_error(source, lineno, e.what());
        }
        layer.weights.resize(out_dim, in_dim);
        layer.bias.resize(out_dim);
        auto read_values = [&](char expect, double* dst, Eigen::Index n) {
          if (!next()) throw ckpt_error(source, lineno, "truncated parameter block");
          std::istringstream vs(line);
          std::string t;
          vs >> t;
          if (t.size() != 1 || t[0] != expect)
            throw ckpt_error(source, lineno, std::string("expected '") + expect + "' block");
          for (Eigen::Index i = 0; i < n; ++i) {
            if (!(vs >> t)) throw ckpt_error(source, lineno, "too few values");
            try {
              dst[i] = parse_real(t);
            } catch (const std::invalid_argument& e) {
              throw ckpt_error(source, lineno, e.what());
            }
            if (!std::isfinite(dst[i])) throw ckpt_error(source, lineno, "non-finite parameter");
          }
          if (vs >> t) throw ckpt_error(source, lineno, "too many values");
        };
        read_values('w', layer.weights.data(), layer.weights.size());
        read_values('b', layer.bias.data(), layer.bias.size());
        layers.push_back(std::move(layer));
      }
      try {
        ckpt.nets.emplace_back(name, nn::Mlp(std::move(layers)));
      } catch (const std::invalid_argument& e) {
        throw ckpt_error(source, lineno, e.what());
      }
    } else if (tag == "end") {
      ended = true;
      break;
    } else {
      throw ckpt_error(source, lineno, "unknown record '" + tag + "'");
    }
  }
  if (!ended) throw ckpt_error(source, lineno, "missing 'end' record");
  return ckpt;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kData, "cannot write checkpoint '" + path + "'");
  out << serialize_checkpoint(ckpt);
  if (!out) throw Error(ErrorKind::kData, "failed writing checkpoint '" + path + "'");
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kData, "cannot open checkpoint '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str(), path);
}

}  // namespace genz3d
