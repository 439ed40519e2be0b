#pragma once

// Adam optimizer with bias correction. Gradients are cleared after each step.

#include <cstdint>
#include <vector>

#include "mfstf/tensor.hpp"

namespace mfstf {

template <typename S>
class Adam {
 public:
  explicit Adam(std::vector<Tensor<S>> params, S lr = S(1e-3), S beta1 = S(0.9),
                S beta2 = S(0.999), S eps = S(1e-8))
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    slots_.reserve(params_.size());
    for (auto& p : params_) slots_.push_back({ArrayX<S>::Zero(p.size()), ArrayX<S>::Zero(p.size())});
  }

  void step() {
    ++step_count_;
    const S bc1 = static_cast<S>(1.0 - std::pow(double(beta1_), double(step_count_)));
    const S bc2 = static_cast<S>(1.0 - std::pow(double(beta2_), double(step_count_)));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      auto& m = slots_[i].m;
      auto& v = slots_[i].v;
      if (p.has_grad()) {
        const auto& g = p.grad();
        m = beta1_ * m + (S(1) - beta1_) * g;
        v = beta2_ * v + (S(1) - beta2_) * g.square();
      } else {
        m *= beta1_;
        v *= beta2_;
      }
      p.values() -= lr_ * (m / bc1) / ((v / bc2).sqrt() + eps_);
      p.zero_grad();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  int64_t step_count() const { return step_count_; }
  S learning_rate() const { return lr_; }

  const ArrayX<S>& first_moment(size_t i) const { return slots_[i].m; }
  const ArrayX<S>& second_moment(size_t i) const { return slots_[i].v; }

 private:
  struct Slot {
    ArrayX<S> m, v;
  };
  std::vector<Tensor<S>> params_;
  std::vector<Slot> slots_;
  int64_t step_count_ = 0;
  S lr_, beta1_, beta2_, eps_;
};

}  // namespace mfstf
