// SPDX-License-Identifier: Apache-2.0
//
// Whole-run workflows behind the command-line tool: data generation,
// pretraining stages, training, evaluation, gradient checking and ablation
// sweeps. Each stage reads and writes files under explicit paths.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spectrafuse/checkpoint.hpp"

namespace spectrafuse {

/// Receives one JSON document per line of progress output.
using LineSink = std::function<void(const std::string&)>;

/// Names accepted by apply_variant / variant_flags.
const std::vector<std::string>& variant_names();
/// Adjusts a training configuration for an ablation variant.
/// ContractError for unknown names.
void apply_variant(TrainConfig& cfg, const std::string& variant);
/// Inference-time fusion flags of a variant (after apply_variant).
AblationFlags variant_flags(const TrainConfig& cfg, const std::string& variant);

Manifest run_gen_data(const TrainConfig& cfg, const std::string& out_dir);

/// Builds a fresh model, pretrains the RGB tower (when enabled) and the
/// thermal tower with MAE on training images, and saves a model bundle.
void run_pretrain_mae(const TrainConfig& cfg, const std::string& data_dir, const std::string& out_path,
                      const LineSink& sink = {});

/// Loads `init_path` (or a fresh model when empty), pretrains the decoder
/// and saves a model bundle.
void run_pretrain_lm(const TrainConfig& cfg, const std::string& init_path, const std::string& out_path,
                     const LineSink& sink = {});

/// Trains from `init_path` and writes `<out_dir>/model.tvlb` and
/// `<out_dir>/metrics.jsonl`. Returns the final training state's step.
std::uint64_t run_train(const TrainConfig& cfg, const std::string& data_dir, const std::string& init_path,
                        const std::string& out_dir, const LineSink& sink = {});

/// Scores a checkpoint on the eval split. Returns the report JSON.
std::string run_eval(const TrainConfig& cfg, const std::string& checkpoint_path, const std::string& data_dir,
                     std::optional<Modality> subset, const std::string& variant = "full");

struct GradCheckResult {
  std::string component;
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_rel_err = 0.0;
  double max_abs_grad = 0.0;  // largest analytic entry probed
  std::string worst;
};

/// Central-difference check of every trainable parameter class at the
/// configured widths. Probes at most `max_per_param` entries per tensor.
std::vector<GradCheckResult> run_gradcheck(const TrainConfig& cfg, std::size_t max_per_param,
                                           const LineSink& sink = {});

/// Trains `variant` and the full model from the same pretrained bundle on
/// the same data and reports both evaluations. Returns the JSON summary.
std::string run_ablate(const TrainConfig& cfg, const std::string& data_dir, const std::string& init_path,
                       const std::string& variant, const std::string& out_dir, const LineSink& sink = {});

}  // namespace spectrafuse
