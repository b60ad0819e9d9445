#pragma once

#include <cmath>
#include <vector>

#include "softsense/nn/tape.hpp"

namespace softsense::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam over a fixed subset of parameters. Bumps each parameter's version so
/// tapes recorded before the update are rejected by backward().
template <class T>
class Adam {
 public:
  Adam(std::vector<Parameter<T>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.learning_rate > 0)) throw std::invalid_argument("learning rate must be positive");
    for (auto* p : params_) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      if (p.grad.size() != p.value.size()) {
        throw ShapeError("gradient of '" + p.name + "' has shape " + shape_string(p.grad.shape) +
                         ", parameter has " + shape_string(p.value.shape));
      }
      if (!p.grad.all_finite()) throw NonFiniteError("non-finite gradient in parameter '" + p.name + "'");
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double g = p.grad.data[i];
        m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
        v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
        const double update = cfg_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg_.epsilon);
        p.value.data[i] = static_cast<T>(p.value.data[i] - update);
      }
      ++p.version;
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }
  std::uint64_t steps() const { return t_; }

 private:
  std::vector<Parameter<T>*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace softsense::nn
