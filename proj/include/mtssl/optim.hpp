// mtssl/optim.hpp

// Copyright 2026  mtssl authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <string>
#include <vector>

#include "mtssl/params.hpp"

namespace mtssl {

struct AdamWOptions {
  double peak_lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int warmup_steps = 0;
  int total_steps = 1000;  // learning rate reaches 0 here
};

/// Linear warmup to peak_lr, then linear decay to 0 at total_steps.
inline double LinearDecayLr(const AdamWOptions& o, int step) {
  if (o.warmup_steps > 0 && step < o.warmup_steps) return o.peak_lr * (step + 1) / o.warmup_steps;
  const int span = std::max(1, o.total_steps - o.warmup_steps);
  const double frac = 1.0 - static_cast<double>(step - o.warmup_steps) / span;
  return o.peak_lr * std::max(0.0, frac);
}

/// Decoupled weight decay Adam over the trainable members of a ParameterSet.
class AdamW {
 public:
  AdamW(const ParameterSet& params, AdamWOptions options) : params_(&params), opt_(options) {
    for (const auto& [_, v] : params.items()) {
      m_.push_back(Matrix::Zero(v->rows(), v->cols()));
      v_.push_back(Matrix::Zero(v->rows(), v->cols()));
    }
  }

  double lr() const { return LinearDecayLr(opt_, step_); }
  int step() const { return step_; }

  /// Applies one update using the accumulated gradients, then advances the schedule.
  void Step() {
    const double lr = this->lr();
    ++step_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, step_), bc2 = 1.0 - std::pow(opt_.beta2, step_);
    const auto& items = params_->items();
    for (std::size_t i = 0; i < items.size(); ++i) {
      auto& p = *items[i].second;
      if (!p.requires_grad || p.grad.size() == 0) continue;
      m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * p.grad;
      v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * p.grad.cwiseAbs2();
      const Matrix update =
          (m_[i] / bc1).array() / ((v_[i] / bc2).array().sqrt() + opt_.eps) + opt_.weight_decay * p.value.array();
      p.value -= lr * update;
    }
  }

 private:
  const ParameterSet* params_;
  AdamWOptions opt_;
  std::vector<Matrix> m_, v_;
  int step_ = 0;
};

}  // namespace mtssl
