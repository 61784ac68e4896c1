#pragma once

#include "hsiucd/layers.hpp"

#include <vector>

namespace hsiucd {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  bool cosine = true;  // cosine decay from lr to min_lr over total_steps
  double min_lr = 0.0;
};

/// Adam with optional cosine learning-rate decay.  Holds only the moment
/// buffers; the parameter list is passed on every call and must keep the
/// same order and sizes.
class Adam {
public:
  Adam() = default;
  Adam(AdamConfig config, long total_steps);

  /// Applies one update from the accumulated gradients.
  void step(const std::vector<Param*>& params);
  double current_lr() const;
  long steps_taken() const { return step_; }
  const AdamConfig& config() const { return config_; }

  /// Moment buffers as tensors named m.<param> and v.<param>.
  std::vector<Param> state(const std::vector<Param*>& params) const;
  void load_state(const std::vector<Param*>& params, const std::vector<Param>& state,
                  long steps_taken);

private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  long total_steps_ = 1;
  long step_ = 0;
};

}  // namespace hsiucd
