#pragma once

#include "percad/nn.hpp"
#include "percad/serialize.hpp"

namespace percad::optim {

// Adaptive moment estimation with bias correction; no weight decay, no
// schedule.
template <typename S>
class Adam {
 public:
  Adam() = default;
  Adam(double lr, double beta1, double beta2, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void attach(std::vector<nn::Parameter<S>*> params) {
    params_ = std::move(params);
    m_.clear();
    v_.clear();
    for (auto* p : params_) {
      m_.push_back(Tensor<S>::zeros(p->value.shape));
      v_.push_back(Tensor<S>::zeros(p->value.shape));
    }
    t_ = 0;
  }

  void step() {
    ++t_;
    const S c1 = S(1) - static_cast<S>(std::pow(b1_, t_));
    const S c2 = S(1) - static_cast<S>(std::pow(b2_, t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i];
      m_[i].data = static_cast<S>(b1_) * m_[i].data +
                   static_cast<S>(1 - b1_) * p.grad.data;
      v_[i].data = static_cast<S>(b2_) * v_[i].data +
                   static_cast<S>(1 - b2_) * p.grad.data * p.grad.data;
      p.value.data -= static_cast<S>(lr_) * (m_[i].data / c1) /
                      ((v_[i].data / c2).sqrt() + static_cast<S>(eps_));
    }
  }

  void save(io::BinWriter& w) const {
    w.i64(t_);
    w.u32(static_cast<std::uint32_t>(m_.size()));
    for (size_t i = 0; i < m_.size(); ++i) {
      w.tensor(m_[i]);
      w.tensor(v_[i]);
    }
  }

  void load(io::BinReader& r) {
    t_ = r.i64();
    const auto n = r.u32();
    PERCAD_CHECK(n == m_.size(), "optimizer state size mismatch");
    for (size_t i = 0; i < m_.size(); ++i) {
      m_[i] = r.template tensor<S>();
      v_[i] = r.template tensor<S>();
      PERCAD_CHECK(m_[i].shape == params_[i]->value.shape &&
                       v_[i].shape == params_[i]->value.shape,
                   "optimizer state shape mismatch");
    }
  }

  std::int64_t steps() const { return t_; }

 private:
  std::vector<nn::Parameter<S>*> params_;
  std::vector<Tensor<S>> m_, v_;
  std::int64_t t_ = 0;
  double lr_ = 1e-3, b1_ = 0.9, b2_ = 0.999, eps_ = 1e-8;
};

}  // namespace percad::optim
