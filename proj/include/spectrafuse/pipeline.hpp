// SPDX-License-Identifier: Apache-2.0
//
// Full model assembly, the two-group training step, missing-modality
// inference, thermal MAE pretraining and evaluation.
#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spectrafuse/config.hpp"
#include "spectrafuse/datagen.hpp"
#include "spectrafuse/decoder.hpp"
#include "spectrafuse/encoders.hpp"
#include "spectrafuse/fusion.hpp"
#include "spectrafuse/objectives.hpp"
#include "spectrafuse/optim.hpp"

namespace spectrafuse {

struct Model {
  VitEncoderParams rgb_encoder;
  VitEncoderParams thermal_encoder;
  MaeDecoderParams mae_decoder;
  FusionParameters fusion;
  Tensor rgb_null;      // stands in for R when the RGB stream is absent
  Tensor thermal_null;  // stands in for T when the thermal stream is absent
  FrozenDecoder decoder;

  /// Random initialisation from `cfg.seed`; the RGB tower and the decoder
  /// start frozen, the thermal tower follows the configured freeze split.
  static Model init(const TrainConfig& cfg);
  void visit(const ParamVisitor& fn);
};

/// A dataset item together with its decoded images.
struct Sample {
  QaItem item;
  ImagePlane rgb;
  ImagePlane thermal;
};

std::vector<Sample> load_samples(const std::string& dir, const std::string& split);

/// Streams fed to the model: rgb only, thermal only ("ir"), or both.
using ModalitySubset = Modality;

struct ForwardResult {
  Tensor rgb_tokens;      // R (after masking when masking is on)
  Tensor thermal_tokens;  // T
  FusionOutput fusion;
  Tensor logits;  // [1 × V] answer logits
  bool rgb_present = false;
  bool thermal_present = false;
};

struct ForwardOptions {
  AblationFlags variant;
  std::optional<double> mask_ratio;  // training-time block masking of the RGB input
  std::uint64_t mask_seed = 0;
};

ForwardResult forward_sample(const Model& model, const Sample& sample, ModalitySubset subset,
                             const ForwardOptions& opts);

/// Greedy answer restricted to {yes, no}. Never applies block masking.
std::string infer_answer(const Model& model, const Sample& sample, ModalitySubset subset,
                         const AblationFlags& variant = {});

/// Model plus optimizer groups, frozen-parameter digests and the RNG stream
/// driving masking and shuffling.
struct TrainingState {
  TrainConfig config;
  Model model;
  std::vector<ParamGroup> groups;  // [Group-T, Group-F]
  FreezeRegistry registry;
  Rng rng;
  std::uint64_t step = 0;

  /// Builds both parameter groups and registers every frozen parameter.
  /// Call after pretraining, once the freeze split is final.
  static TrainingState create(const TrainConfig& cfg, Model model);
};

struct StepRecord {
  std::uint64_t step;
  double lm, align, contr, gate, total;
};

using MetricsSink = std::function<void(const StepRecord&)>;

/// One optimisation step on `batch`, each sample fed with the streams its
/// modality tag names. Alignment and contrastive terms use only samples with
/// both real streams (zero when there are none).
LossBreakdown train_step(TrainingState& state, std::span<const Sample* const> batch);

/// `cfg.epochs` passes over `samples` in shuffled batches.
std::vector<StepRecord> train(TrainingState& state, const std::vector<Sample>& samples,
                              const MetricsSink& sink = {});

/// MAE pretraining of the thermal tower on replicated thermal planes.
/// Returns the per-step mean masked-patch loss.
std::vector<double> pretrain_mae(Model& model, const std::vector<ImagePlane>& thermal_images,
                                 const TrainConfig& cfg);

/// MAE pretraining of the RGB tower with a throwaway decoder; the tower is
/// frozen afterwards.
std::vector<double> pretrain_rgb_encoder(Model& model, const std::vector<ImagePlane>& rgb_images,
                                         const TrainConfig& cfg);

/// Builds the text corpus and pretrains the decoder, leaving it frozen.
std::vector<double> pretrain_language_model(Model& model, const TrainConfig& cfg);

struct EvalResult {
  std::map<std::string, std::string> predictions;
  BenchReport report;
};

/// Feeds each sample the streams its tag names; `filter` keeps only one tag.
EvalResult evaluate(const Model& model, const std::vector<Sample>& samples, const AblationFlags& variant = {},
                    std::optional<Modality> filter = std::nullopt);

std::string step_record_json(const StepRecord& r);

}  // namespace spectrafuse
