// SPDX-License-Identifier: Apache-2.0
//
// Procedural paired RGB/thermal scenes with yes/no questions whose answer is
// recoverable from a designated modality, JSONL dataset files, and scoring.
#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "spectrafuse/image.hpp"
#include "spectrafuse/vocab.hpp"

namespace spectrafuse {

enum class ObjectKind { warm_body, cold_object, light_source };

struct SceneObject {
  ObjectKind kind;
  double cx;
  double cy;
  double radius;  // Gaussian sigma in pixels
};

struct SceneSpec {
  std::size_t height = 56;
  std::size_t width = 56;
  std::vector<SceneObject> objects;
  double illumination = 1.0;  // [0, 1]
  std::uint64_t seed = 0;

  /// ContractError for objects outside the image or illumination outside [0, 1].
  void validate() const;
};

/// Warm bodies render in RGB only at illumination ≥ this level.
inline constexpr double kVisibleIllumination = 0.3;
inline constexpr double kThermalBackground = 0.3;
/// Range of the Gaussian radius of generated objects, in pixels.
inline constexpr double kObjectRadiusMin = 6.0;
inline constexpr double kObjectRadiusMax = 9.0;

/// Background colour of the RGB plane for a given illumination.
std::array<double, 3> rgb_background(double illumination);

struct ImagePair {
  ImagePlane rgb;      // 3 channels
  ImagePlane thermal;  // 1 channel
};

ImagePair generate_pair(const SceneSpec& spec);

enum class Modality { rgb, ir, rgb_ir };

std::string to_string(Modality m);
Modality parse_modality(const std::string& tag);  // ContractError on unknown tags

/// Gold answer for a question kind: yes iff an object of the asked kind is
/// present.
bool scene_answer(const SceneSpec& spec, QuestionKind kind);

struct SceneQuestion {
  SceneSpec scene;
  QuestionKind question;
  Modality modality;
  bool answer;
};

/// The `index`-th item of a split: subset cycles rgb → ir → rgb+ir and
/// answers alternate so each subset is balanced.
SceneQuestion make_scene_question(std::size_t index, std::uint64_t seed, std::size_t height,
                                  std::size_t width);

/// Toggles the thermal evidence of an ir item (removes the warm body, or adds
/// one). Returns the modified scene.
SceneSpec flip_thermal_evidence(const SceneSpec& spec, std::uint64_t seed);

/// For `n` ir items checks that flipping the thermal evidence flips the gold
/// answer and leaves the RGB plane bit-identical. Returns the failing count.
std::size_t modality_flip_self_test(std::size_t n, std::uint64_t seed);

struct QaItem {
  std::string id;
  std::string rgb_path;      // relative to the dataset root
  std::string thermal_path;  // relative to the dataset root
  std::string question;
  std::vector<TokenId> question_tokens;
  std::string answer;  // "yes" | "no"
  Modality modality;
};

struct DatasetOptions {
  std::size_t scenes = 100;
  double eval_fraction = 0.2;
  std::uint64_t seed = 1;
  std::size_t height = 56;
  std::size_t width = 56;
};

struct SubsetCount {
  std::size_t items = 0;
  std::size_t yes = 0;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::size_t scenes = 0;
  std::map<std::string, std::map<std::string, SubsetCount>> splits;  // split → subset → counts
};

inline constexpr int kGeneratorVersion = 1;

/// Writes images/, train.jsonl, eval.jsonl and manifest.json under `dir`.
/// IoError when the directory cannot be written.
Manifest emit_dataset(const DatasetOptions& opts, const std::string& dir);
Manifest read_manifest(const std::string& dir);
/// Parses `<dir>/<split>.jsonl`.
std::vector<QaItem> load_split(const std::string& dir, const std::string& split);

struct SubsetScore {
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct BenchReport {
  std::map<std::string, SubsetScore> subsets;
  double overall = 0.0;

  std::string to_json() const;
};

/// First whitespace-separated token, lowercased.
std::string normalize_answer(const std::string& text);

/// Exact-match accuracy per subset and the item-count-weighted overall.
/// ContractError listing every gold id without a prediction.
BenchReport score_benchmark(const std::map<std::string, std::string>& predictions,
                            const std::vector<QaItem>& gold);

}  // namespace spectrafuse
