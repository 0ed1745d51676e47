// mtssl/params.hpp

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

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mtssl/autograd.hpp"
#include "mtssl/common.hpp"

namespace mtssl {

/// Named model parameters in creation order.
class ParameterSet {
 public:
  ag::Var Add(const std::string& name, Matrix init) {
    if (index_.count(name)) throw ConfigError(StrCat("duplicate parameter ", name));
    index_[name] = items_.size();
    items_.emplace_back(name, ag::Parameter(std::move(init)));
    return items_.back().second;
  }

  /// Gaussian init with std 1/sqrt(fan_in).
  ag::Var AddGaussian(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    const double sd = scale / std::sqrt(static_cast<double>(rows));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.Normal();
    return Add(name, std::move(m));
  }

  const ag::Var& Get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError(StrCat("unknown parameter ", name));
    return items_[it->second].second;
  }
  bool Has(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, ag::Var>>& items() const { return items_; }

  void ZeroGrad() const {
    for (const auto& [_, v] : items_) v->ZeroGrad();
  }

  /// Parameters whose name starts with `prefix` stop (or resume) receiving gradients.
  void SetTrainable(const std::string& prefix, bool trainable) const {
    for (const auto& [name, v] : items_)
      if (name.rfind(prefix, 0) == 0) v->requires_grad = trainable;
  }

  std::size_t NumScalars() const {
    std::size_t n = 0;
    for (const auto& [_, v] : items_) n += static_cast<std::size_t>(v->value.size());
    return n;
  }

 private:
  std::vector<std::pair<std::string, ag::Var>> items_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace mtssl
