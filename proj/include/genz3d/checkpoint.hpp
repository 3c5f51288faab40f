#pragma once

// Versioned text container for trained models. Layout:
//
//   genz3d-ckpt v1
//   kind <tag>
//   meta <key> <value...>
//   mlp <name> <layer count>
//   layer <in> <out> <activation>
//   w <in*out values, row-major>
//   b <out values>
//   end
//
// Reals use the shortest round-trip decimal form, so write->read is exact.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "genz3d/nn.hpp"

namespace genz3d {

inline constexpr const char* kCheckpointMagic = "genz3d-ckpt v1";

struct Checkpoint {
  std::string kind;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, nn::Mlp>> nets;

  const nn::Mlp& net(const std::string& name) const;
  bool has_net(const std::string& name) const;
  const std::string& require_meta(const std::string& key) const;
};

void write_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::string& path);

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& text, const std::string& source = "<memory>");

// Shortest exact decimal rendering of a double, and its inverse.
std::string format_real(double v);
double parse_real(const std::string& token);

std::string join_reals(const std::vector<double>& values);
std::vector<double> split_reals(const std::string& text);
std::string join_ints(const std::vector<int>& values);
std::vector<int> split_ints(const std::string& text);

}  // namespace genz3d
