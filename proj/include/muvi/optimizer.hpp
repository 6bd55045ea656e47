#pragma once

#include <vector>

#include "muvi/errors.hpp"
#include "muvi/layers.hpp"

namespace muvi {

/// Classic SGD with momentum: v = m*v + g; p -= lr*v. Velocity buffers are
/// keyed by position, so the parameter list must stay stable across steps.
template <typename T>
class SgdMomentum {
 public:
  SgdMomentum(double lr, double momentum = 0.9) : lr_(lr), momentum_(momentum) {
    if (lr < 0.0) throw ConfigError("learning rate must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  }

  void step(const std::vector<Param<T>*>& params) {
    if (velocity_.empty()) {
      velocity_.reserve(params.size());
      for (const Param<T>* p : params) velocity_.emplace_back(p->value.size(), T(0));
    }
    if (velocity_.size() != params.size()) throw StateMismatch("optimizer bound to a different parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param<T>& p = *params[i];
      std::vector<T>& v = velocity_[i];
      if (v.size() != p.value.size()) throw StateMismatch("parameter size changed under optimizer");
      for (std::size_t j = 0; j < v.size(); ++j) {
        v[j] = static_cast<T>(momentum_ * v[j] + p.grad[j]);
        p.value[j] -= static_cast<T>(lr_ * v[j]);
      }
    }
  }

  static void zero_grad(const std::vector<Param<T>*>& params) {
    for (Param<T>* p : params) p->zero_grad();
  }

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<T>> velocity_;
};

}  // namespace muvi
