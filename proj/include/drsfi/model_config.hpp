#pragma once

#include <cstddef>
#include <string>

#include "drsfi/errors.hpp"

namespace drsfi {

// Dummy-model hyper-parameters. Defaults are the fixed input dimensions of the
// design-space grid; mlp_hidden and embed_dim sweep {64, 128, 256, 512}, depth {1, 2}.
struct DummyModelConfig {
  std::size_t mlp_depth = 1;
  std::size_t mlp_hidden = 64;
  std::size_t embed_dim = 64;
  std::size_t dense_dim = 128;
  std::size_t sparse_dim = 8192;

  void validate() const {
    if (mlp_depth < 1 || mlp_hidden < 1 || embed_dim < 1 || dense_dim < 1 || sparse_dim < 1)
      throw ConfigError("model config: every dimension must be >= 1");
  }

  bool operator==(const DummyModelConfig&) const = default;
};

inline std::string describe(const DummyModelConfig& c) {
  return "depth=" + std::to_string(c.mlp_depth) + " hidden=" + std::to_string(c.mlp_hidden) +
         " embed=" + std::to_string(c.embed_dim) + " dense=" + std::to_string(c.dense_dim) +
         " sparse=" + std::to_string(c.sparse_dim);
}

}  // namespace drsfi
