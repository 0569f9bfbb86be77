#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "wsci/tensor.hpp"

namespace wsci {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moments are kept per parameter name so they
// survive checkpointing; non-trainable parameters are never touched.
template <class T>
class AdamT {
 public:
  explicit AdamT(AdamConfig cfg = {}) : cfg_(cfg) {}

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  int64_t step_count() const { return step_; }

  void step(std::map<std::string, ParameterT<T>>& params) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(step_));
    for (auto& [name, p] : params) {
      if (!p.trainable) continue;
      auto& m = moments_m_[name];
      auto& v = moments_v_[name];
      if (m.size() != p.value.size()) m.assign(p.value.size(), T(0));
      if (v.size() != p.value.size()) v.assign(p.value.size(), T(0));
      for (size_t i = 0; i < p.value.size(); ++i) {
        const double g = double(p.grad.data[i]);
        m[i] = T(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g);
        v[i] = T(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g);
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        p.value.data[i] -= T(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon));
      }
    }
  }

  const std::map<std::string, std::vector<T>>& moments_m() const { return moments_m_; }
  const std::map<std::string, std::vector<T>>& moments_v() const { return moments_v_; }

  // Resume from checkpointed state.
  void restore(int64_t step, std::map<std::string, std::vector<T>> m,
               std::map<std::string, std::vector<T>> v) {
    step_ = step;
    moments_m_ = std::move(m);
    moments_v_ = std::move(v);
  }

 private:
  AdamConfig cfg_;
  int64_t step_ = 0;
  std::map<std::string, std::vector<T>> moments_m_;
  std::map<std::string, std::vector<T>> moments_v_;
};

using Adam = AdamT<float>;

}  // namespace wsci
