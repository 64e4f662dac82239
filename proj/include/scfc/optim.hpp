#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "scfc/rng.hpp"
#include "scfc/tape.hpp"

namespace scfc::ad {

// Named parameter tensors. std::map keeps iteration in name order, which
// fixes the update order and keeps runs reproducible.
using ParamStore = std::map<std::string, Tensor>;

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Parameters missing from the gradient map are
// treated as zero-gradient (their moments still decay).
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(ParamStore& params, const std::map<std::string, Tensor>& grads);

  long step_count() const { return step_count_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long step_count_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

// fan-in scaled uniform init: U(-sqrt(6/fan_in), +sqrt(6/fan_in))
Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng);

// Binary checkpoint: "SCFC" magic, u32 version, u32 tensor count, then per
// tensor a u32 name length, the name bytes, u32 rank, u64 dims, and f64
// values, all little-endian. A round trip is bit-exact.
void save_checkpoint(const ParamStore& params, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

}  // namespace scfc::ad
