#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "windinr/tensor.hpp"

namespace windinr::optim {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW)
};

/// Adam / AdamW over one flat vector; moment buffers are sized on the first step.
class Adam {
 public:
  explicit Adam(AdamConfig config) : config_(config) {}
  void step(std::span<double> params, std::span<const double> grad);
  std::size_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

/// One Adam instance per named tensor; tensors without a gradient are left alone.
class NamedAdam {
 public:
  explicit NamedAdam(AdamConfig config) : config_(config) {}
  template <typename Lookup>
  void step(Lookup&& tensor_of, const std::map<std::string, Tensor>& grads) {
    for (const auto& [name, g] : grads) {
      auto it = state_.try_emplace(name, config_).first;
      Tensor& p = tensor_of(name);
      it->second.step(p.data(), g.data());
    }
  }

 private:
  AdamConfig config_;
  std::map<std::string, Adam> state_;
};

double norm(std::span<const double> v);
/// Rescales g to at most max_norm; returns the norm before clipping.
double clip_by_norm(std::span<double> g, double max_norm);

}  // namespace windinr::optim
