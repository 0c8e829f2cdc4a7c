// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/optim.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

#include "spectrafuse/errors.hpp"

namespace spectrafuse {

void ParamGroup::add(const std::string& param_name, const Tensor& param) {
  if (!param.requires_grad()) {
    throw ContractError("optimizer: parameter " + param_name + " in group " + name + " does not require grad");
  }
  slots.push_back(Slot{param_name, param, std::vector<double>(param.numel(), 0.0),
                       std::vector<double>(param.numel(), 0.0)});
}

double ParamGroup::current_lr() const {
  const auto warm = config.warmup_steps;
  if (warm > 0 && step < warm) return config.lr * static_cast<double>(step + 1) / static_cast<double>(warm);
  if (config.decay_steps == 0) return config.lr;
  const double t = std::min(1.0, static_cast<double>(step - warm) / static_cast<double>(config.decay_steps));
  return config.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

void prepare_gradients(std::vector<ParamGroup>& groups) {
  for (auto& g : groups)
    for (auto& s : g.slots) s.param.zero_grad();
}

void adamw_step(std::vector<ParamGroup>& groups) {
  for (const auto& g : groups)
    for (const auto& s : g.slots)
      if (!s.param.has_grad()) {
        throw ContractError("optimizer: no gradient for " + s.name + " in group " + g.name);
      }
  for (auto& g : groups) {
    const auto& c = g.config;
    const double lr = g.current_lr();
    ++g.step;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(g.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(g.step));
    for (auto& s : g.slots) {
      auto theta = s.param.mutable_data();
      const auto grad = s.param.grad();
      for (std::size_t i = 0; i < theta.size(); ++i) {
        theta[i] -= lr * c.weight_decay * theta[i];
        s.m[i] = c.beta1 * s.m[i] + (1.0 - c.beta1) * grad[i];
        s.v[i] = c.beta2 * s.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
        const double m_hat = s.m[i] / bc1;
        const double v_hat = s.v[i] / bc2;
        theta[i] -= lr * m_hat / (std::sqrt(v_hat) + c.eps);
      }
      s.param.clear_grad();
    }
  }
}

double clip_grad_norm(std::vector<ParamGroup>& groups, double max_norm) {
  double sq = 0.0;
  for (const auto& g : groups)
    for (const auto& s : g.slots)
      if (s.param.has_grad())
        for (double v : s.param.grad()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double k = max_norm / norm;
    for (auto& g : groups)
      for (auto& s : g.slots)
        if (s.param.has_grad())
          for (double& v : s.param.mutable_grad()) v *= k;
  }
  return norm;
}

std::uint64_t tensor_digest(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ull;
    }
  };
  for (std::size_t e : t.shape()) {
    const std::uint64_t v = e;
    mix(&v, sizeof v);
  }
  const auto d = t.data();
  mix(d.data(), d.size() * sizeof(double));
  return h;
}

void FreezeRegistry::track(const std::string& name, const Tensor& param) {
  entries_.push_back(Entry{name, param, tensor_digest(param)});
}

std::vector<std::string> FreezeRegistry::verify() const {
  std::vector<std::string> drifted;
  for (const auto& e : entries_)
    if (tensor_digest(e.param) != e.digest) drifted.push_back(e.name);
  return drifted;
}

}  // namespace spectrafuse
