#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bytelm/model.hpp"
#include "bytelm/tensor.hpp"

namespace bytelm {

template <typename S>
struct NamedParam {
  std::string name;
  Tensor<S> tensor;
};

template <typename S>
std::vector<NamedParam<S>> collect_parameters(TransformerLM<S>& model) {
  std::vector<NamedParam<S>> out;
  model.visit_parameters([&](const std::string& name, Tensor<S>& t) { out.push_back({name, t}); });
  return out;
}

// A parameter with no populated gradient (e.g. a head whose layer was dropped
// from the schedule this step) is treated as having zero gradient.
template <typename S>
void check_grads_finite(std::span<NamedParam<S>> params) {
  for (auto& p : params) {
    if (p.tensor.has_grad() && !p.tensor.grad().isFinite().all())
      throw std::runtime_error("optimizer: non-finite gradient in parameter " + p.name);
  }
}

// p <- p - lr * g
template <typename S>
void sgd_step(std::span<NamedParam<S>> params, double lr) {
  check_grads_finite(params);
  for (auto& p : params) {
    if (p.tensor.has_grad()) p.tensor.values_mut() -= S(lr) * p.tensor.grad();
  }
}

// Classical heavy-ball: v <- mu*v + g; p <- p - lr*v. With nesterov, the
// applied update is g + mu*v instead of v. mu=0 reduces to plain SGD.
template <typename S>
void momentum_step(std::span<NamedParam<S>> params, std::vector<ArrayX<S>>& velocity, double lr,
                   double mu, bool nesterov = false) {
  if (velocity.empty()) {
    velocity.reserve(params.size());
    for (auto& p : params) velocity.push_back(ArrayX<S>::Zero(p.tensor.size()));
  }
  if (velocity.size() != params.size())
    throw std::invalid_argument("momentum_step: velocity buffer count mismatch");
  check_grads_finite(params);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& v = velocity[i];
    auto& p = params[i];
    if (v.size() != p.tensor.size())
      throw std::invalid_argument("momentum_step: velocity shape mismatch for " + p.name);
    v *= S(mu);
    if (p.tensor.has_grad()) v += p.tensor.grad();
    if (nesterov) {
      p.tensor.values_mut() -= S(lr) * S(mu) * v;
      if (p.tensor.has_grad()) p.tensor.values_mut() -= S(lr) * p.tensor.grad();
    } else {
      p.tensor.values_mut() -= S(lr) * v;
    }
  }
}

// Global-norm gradient clip; returns the pre-clip norm.
template <typename S>
double clip_gradients(std::span<NamedParam<S>> params, double max_norm) {
  check_grads_finite(params);
  double sq = 0;
  for (auto& p : params) {
    if (p.tensor.has_grad())
      sq += static_cast<double>(p.tensor.grad().template cast<double>().square().sum());
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const S factor = static_cast<S>(max_norm / norm);
    for (auto& p : params) {
      if (p.tensor.has_grad()) p.tensor.node()->grad *= factor;
    }
  }
  return norm;
}

}  // namespace bytelm
