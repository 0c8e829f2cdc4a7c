// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay over named parameter groups, and a
// digest registry that detects drift in parameters meant to stay frozen.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spectrafuse/tensor.hpp"

namespace spectrafuse {

struct AdamWConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t warmup_steps = 0;  // linear ramp of the learning rate; 0 disables
  std::uint64_t decay_steps = 0;   // cosine decay to zero after warmup; 0 disables
};

struct ParamGroup {
  struct Slot {
    std::string name;
    Tensor param;
    std::vector<double> m;
    std::vector<double> v;
  };

  std::string name;
  AdamWConfig config;
  std::vector<Slot> slots;
  std::uint64_t step = 0;

  ParamGroup(std::string name, AdamWConfig config) : name(std::move(name)), config(config) {}

  void add(const std::string& param_name, const Tensor& param);
  /// Learning rate in effect for the next step.
  double current_lr() const;
};

/// Gives every group member a zeroed gradient buffer, so parameters that
/// do not take part in a given loss still receive a (zero) gradient.
void prepare_gradients(std::vector<ParamGroup>& groups);

/// One AdamW update per group: θ ← θ − η·wd·θ, then the bias-corrected
/// Adam step. Clears gradients afterwards. ContractError if any member has
/// no gradient.
void adamw_step(std::vector<ParamGroup>& groups);

/// Rescales all group gradients so their joint L2 norm is at most
/// `max_norm` (no-op when max_norm <= 0). Returns the norm before scaling.
double clip_grad_norm(std::vector<ParamGroup>& groups, double max_norm);

std::uint64_t tensor_digest(const Tensor& t);

class FreezeRegistry {
 public:
  void track(const std::string& name, const Tensor& param);
  std::size_t size() const { return entries_.size(); }
  /// Names of tracked parameters whose contents changed since `track`.
  std::vector<std::string> verify() const;

 private:
  struct Entry {
    std::string name;
    Tensor param;
    std::uint64_t digest;
  };
  std::vector<Entry> entries_;
};

}  // namespace spectrafuse
