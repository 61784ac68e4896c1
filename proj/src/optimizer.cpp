#include "hsiucd/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hsiucd {

Adam::Adam(AdamConfig config, long total_steps)
    : config_(config), total_steps_(std::max(1L, total_steps)) {
  if (!(config_.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
}

double Adam::current_lr() const {
  if (!config_.cosine) return config_.lr;
  const double t = std::min(1.0, static_cast<double>(step_) / static_cast<double>(total_steps_));
  return config_.min_lr + 0.5 * (config_.lr - config_.min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

void Adam::step(const std::vector<Param*>& params) {
  if (m_.empty()) {
    for (const Param* p : params) {
      m_.emplace_back(p->size(), 0.0);
      v_.emplace_back(p->size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw std::invalid_argument("optimizer parameter list changed");
  const double lr = current_lr();
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    if (m.size() != p.size()) throw std::invalid_argument("optimizer parameter size changed");
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i] + config_.weight_decay * p.value[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      p.value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

std::vector<Param> Adam::state(const std::vector<Param*>& params) const {
  std::vector<Param> out;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param m("m." + params[k]->name, params[k]->shape);
    Param v("v." + params[k]->name, params[k]->shape);
    if (k < m_.size()) {
      m.value = m_[k];
      v.value = v_[k];
    }
    out.push_back(std::move(m));
    out.push_back(std::move(v));
  }
  return out;
}

void Adam::load_state(const std::vector<Param*>& params, const std::vector<Param>& state,
                      long steps_taken) {
  if (state.size() != 2 * params.size()) throw std::invalid_argument("optimizer state size mismatch");
  m_.assign(params.size(), {});
  v_.assign(params.size(), {});
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Param& m = state[2 * k];
    const Param& v = state[2 * k + 1];
    if (m.name != "m." + params[k]->name || v.name != "v." + params[k]->name ||
        m.value.size() != params[k]->size() || v.value.size() != params[k]->size()) {
      throw std::invalid_argument("optimizer state does not match parameter " + params[k]->name);
    }
    m_[k] = m.value;
    v_[k] = v.value;
  }
  step_ = steps_taken;
}

}  // namespace hsiucd
