// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/datagen.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "spectrafuse/errors.hpp"
#include "spectrafuse/random.hpp"

namespace spectrafuse {

namespace fs = std::filesystem;
using nlohmann::json;

void SceneSpec::validate() const {
  if (height == 0 || width == 0) throw ContractError("scene: empty image extents");
  if (!(illumination >= 0.0 && illumination <= 1.0)) {
    throw ContractError("scene: illumination " + std::to_string(illumination) + " outside [0, 1]");
  }
  for (const auto& o : objects) {
    if (o.cx < 0 || o.cy < 0 || o.cx >= static_cast<double>(width) || o.cy >= static_cast<double>(height) ||
        !(o.radius > 0)) {
      throw ContractError("scene: object out of bounds");
    }
  }
}

std::array<double, 3> rgb_background(double illumination) {
  return {0.55 * illumination, 0.6 * illumination, 0.5 * illumination};
}

ImagePair generate_pair(const SceneSpec& spec) {
  spec.validate();
  const auto bg = rgb_background(spec.illumination);
  ImagePair pair{ImagePlane::filled(spec.height, spec.width, 3, 0.0),
                 ImagePlane::filled(spec.height, spec.width, 1, kThermalBackground)};
  for (std::size_t y = 0; y < spec.height; ++y)
    for (std::size_t x = 0; x < spec.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) pair.rgb.at(y, x, c) = bg[c];

  const double lit = spec.illumination;
  for (const auto& o : spec.objects) {
    std::array<double, 3> colour{};
    bool in_rgb = true;
    switch (o.kind) {
      case ObjectKind::warm_body:
        colour = {0.85 * lit, 0.65 * lit, 0.55 * lit};
        in_rgb = lit >= kVisibleIllumination;
        break;
      case ObjectKind::cold_object:
        colour = {0.2 * lit, 0.3 * lit, 0.7 * lit};
        break;
      case ObjectKind::light_source:
        colour = {1.0, 0.95, 0.75};
        break;
    }
    for (std::size_t y = 0; y < spec.height; ++y)
      for (std::size_t x = 0; x < spec.width; ++x) {
        const double dx = static_cast<double>(x) - o.cx, dy = static_cast<double>(y) - o.cy;
        const double g = std::exp(-(dx * dx + dy * dy) / (2.0 * o.radius * o.radius));
        if (g < 1e-6) continue;
        if (in_rgb) {
          for (std::size_t c = 0; c < 3; ++c) {
            double& p = pair.rgb.at(y, x, c);
            p += (colour[c] - p) * g;
          }
        }
        double& t = pair.thermal.at(y, x, 0);
        if (o.kind == ObjectKind::warm_body) t += (0.95 - t) * g;
        if (o.kind == ObjectKind::cold_object) t -= 0.1 * g;
      }
  }
  for (auto& p : pair.rgb.pixels) p = std::clamp(p, 0.0, 1.0);
  for (auto& p : pair.thermal.pixels) p = std::clamp(p, 0.0, 1.0);
  return pair;
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::rgb:
      return "rgb";
    case Modality::ir:
      return "ir";
    case Modality::rgb_ir:
      return "rgb+ir";
  }
  throw ContractError("unknown modality");
}

Modality parse_modality(const std::string& tag) {
  if (tag == "rgb") return Modality::rgb;
  if (tag == "ir") return Modality::ir;
  if (tag == "rgb+ir") return Modality::rgb_ir;
  throw ContractError("unknown modality tag '" + tag + "' (expected rgb, ir or rgb+ir)");
}

bool scene_answer(const SceneSpec& spec, QuestionKind kind) {
  if (kind == QuestionKind::count) throw ContractError("scene_answer: counting questions are not yes/no");
  const ObjectKind wanted = kind == QuestionKind::warm ? ObjectKind::warm_body : ObjectKind::light_source;
  return std::any_of(spec.objects.begin(), spec.objects.end(), [&](const auto& o) { return o.kind == wanted; });
}

namespace {

SceneObject random_object(ObjectKind kind, const SceneSpec& s, Rng& rng) {
  const double r = uniform(rng, kObjectRadiusMin, kObjectRadiusMax);
  return SceneObject{kind, uniform(rng, r, static_cast<double>(s.width) - r),
                     uniform(rng, r, static_cast<double>(s.height) - r), r};
}

}  // namespace

SceneQuestion make_scene_question(std::size_t index, std::uint64_t seed, std::size_t height,
                                  std::size_t width) {
  SceneQuestion q;
  q.scene.height = height;
  q.scene.width = width;
  q.scene.seed = derive_seed(seed, index);
  Rng rng(q.scene.seed);
  q.modality = static_cast<Modality>(index % 3);
  q.answer = (index / 3) % 2 == 0;
  auto& s = q.scene;
  auto add = [&](ObjectKind k) { s.objects.push_back(random_object(k, s, rng)); };

  switch (q.modality) {
    case Modality::rgb:
      s.illumination = uniform(rng, 0.4, 1.0);
      q.question = QuestionKind::light;
      if (q.answer) add(ObjectKind::light_source);
      if (rng() % 2) add(ObjectKind::warm_body);
      break;
    case Modality::ir:
      s.illumination = uniform(rng, 0.05, 0.25);
      q.question = QuestionKind::warm;
      if (q.answer) add(ObjectKind::warm_body);
      if (rng() % 2) add(ObjectKind::light_source);
      break;
    case Modality::rgb_ir: {
      s.illumination = uniform(rng, 0.05, 1.0);
      q.question = (index / 6) % 2 == 0 ? QuestionKind::warm : QuestionKind::light;
      const bool warm_present = (q.question == QuestionKind::warm) == q.answer;
      add(warm_present ? ObjectKind::warm_body : ObjectKind::light_source);
      break;
    }
  }
  const std::size_t cold = rng() % 3;
  for (std::size_t i = 0; i < cold; ++i) add(ObjectKind::cold_object);
  return q;
}

SceneSpec flip_thermal_evidence(const SceneSpec& spec, std::uint64_t seed) {
  SceneSpec out = spec;
  auto& objs = out.objects;
  const auto warm = [](const SceneObject& o) { return o.kind == ObjectKind::warm_body; };
  if (std::any_of(objs.begin(), objs.end(), warm)) {
    objs.erase(std::remove_if(objs.begin(), objs.end(), warm), objs.end());
  } else {
    Rng rng(seed);
    objs.push_back(random_object(ObjectKind::warm_body, out, rng));
  }
  return out;
}

std::size_t modality_flip_self_test(std::size_t n, std::uint64_t seed) {
  std::size_t failures = 0;
  std::size_t checked = 0;
  for (std::size_t index = 0; checked < n; ++index) {
    const auto q = make_scene_question(index, seed, 56, 56);
    if (q.modality != Modality::ir) continue;
    ++checked;
    const SceneSpec flipped = flip_thermal_evidence(q.scene, derive_seed(seed, ~index));
    const auto a = generate_pair(q.scene), b = generate_pair(flipped);
    const bool ok = scene_answer(q.scene, q.question) == q.answer &&
                    scene_answer(flipped, q.question) != q.answer && a.rgb == b.rgb && a.thermal != b.thermal;
    failures += !ok;
  }
  return failures;
}

namespace {

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string scene_id(std::size_t index) {
  std::ostringstream os;
  os << "scene-" << std::setw(6) << std::setfill('0') << index;
  return os.str();
}

json counts_json(const std::map<std::string, SubsetCount>& m) {
  json j = json::object();
  for (const auto& [k, c] : m) j[k] = {{"items", c.items}, {"yes", c.yes}};
  return j;
}

}  // namespace

Manifest emit_dataset(const DatasetOptions& opts, const std::string& dir) {
  if (opts.scenes == 0) throw ContractError("emit_dataset: no scenes requested");
  if (!(opts.eval_fraction >= 0.0 && opts.eval_fraction < 1.0)) {
    throw ContractError("emit_dataset: eval fraction must lie in [0, 1)");
  }
  const fs::path root(dir);
  ensure_directory(root / "images");
  const auto n_eval = static_cast<std::size_t>(std::llround(opts.eval_fraction * static_cast<double>(opts.scenes)));
  const std::size_t n_train = opts.scenes - n_eval;

  Manifest manifest;
  manifest.seed = opts.seed;
  manifest.scenes = opts.scenes;
  const std::vector<std::pair<std::string, std::size_t>> splits{{"train", n_train}, {"eval", n_eval}};
  std::size_t global = 0;
  for (const auto& [split, count] : splits) {
    const fs::path jsonl = root / (split + ".jsonl");
    std::ofstream out(jsonl);
    if (!out) throw IoError("cannot write " + jsonl.string());
    auto& counts = manifest.splits[split];
    // per-split streams keep each split balanced on its own
    const std::uint64_t split_seed = derive_seed(opts.seed, split == "train" ? 1 : 2);
    for (std::size_t j = 0; j < count; ++j, ++global) {
      const auto q = make_scene_question(j, split_seed, opts.height, opts.width);
      const auto pair = generate_pair(q.scene);
      const std::string id = scene_id(global);
      const std::string rgb_rel = "images/" + id + "_rgb.ppm";
      const std::string th_rel = "images/" + id + "_thermal.pgm";
      write_pnm((root / rgb_rel).string(), pair.rgb);
      write_pnm((root / th_rel).string(), pair.thermal);
      const std::string tag = to_string(q.modality);
      out << json{{"id", id},
                  {"rgb", rgb_rel},
                  {"thermal", th_rel},
                  {"question", question_text(q.question)},
                  {"answer", q.answer ? "yes" : "no"},
                  {"modality", tag}}
                 .dump()
          << '\n';
      counts[tag].items += 1;
      counts[tag].yes += q.answer;
    }
    if (!out) throw IoError("failed while writing " + jsonl.string());
  }

  json m{{"generator", "spectrafuse-scenes"},
         {"generator_version", kGeneratorVersion},
         {"seed", opts.seed},
         {"scenes", opts.scenes},
         {"height", opts.height},
         {"width", opts.width},
         {"splits", json::object()}};
  for (const auto& [split, counts] : manifest.splits) m["splits"][split] = counts_json(counts);
  std::ofstream mf(root / "manifest.json");
  if (!(mf << m.dump(2) << '\n')) throw IoError("cannot write " + (root / "manifest.json").string());
  return manifest;
}

Manifest read_manifest(const std::string& dir) {
  const fs::path path = fs::path(dir) / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json m;
  try {
    m = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("manifest: " + std::string(e.what()), e.byte);
  }
  Manifest out;
  out.seed = m.at("seed").get<std::uint64_t>();
  out.scenes = m.at("scenes").get<std::size_t>();
  for (const auto& [split, subsets] : m.at("splits").items())
    for (const auto& [tag, c] : subsets.items())
      out.splits[split][tag] = SubsetCount{c.at("items").get<std::size_t>(), c.at("yes").get<std::size_t>()};
  return out;
}

std::vector<QaItem> load_split(const std::string& dir, const std::string& split) {
  const fs::path path = fs::path(dir) / (split + ".jsonl");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  const auto& vocab = Vocabulary::standard();
  std::vector<QaItem> items;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      QaItem item;
      item.id = j.at("id").get<std::string>();
      item.rgb_path = j.at("rgb").get<std::string>();
      item.thermal_path = j.at("thermal").get<std::string>();
      item.question = j.at("question").get<std::string>();
      item.question_tokens = vocab.encode(item.question);
      item.answer = j.at("answer").get<std::string>();
      if (item.answer != "yes" && item.answer != "no") {
        throw ContractError("answer must be yes or no, got '" + item.answer + "'");
      }
      item.modality = parse_modality(j.at("modality").get<std::string>());
      items.push_back(std::move(item));
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), line_start);
    }
  }
  return items;
}

std::string normalize_answer(const std::string& text) {
  std::istringstream in(text);
  std::string first;
  in >> first;
  std::transform(first.begin(), first.end(), first.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return first;
}

BenchReport score_benchmark(const std::map<std::string, std::string>& predictions,
                            const std::vector<QaItem>& gold) {
  std::string missing;
  for (const auto& item : gold)
    if (!predictions.contains(item.id)) missing += (missing.empty() ? "" : ", ") + item.id;
  if (!missing.empty()) throw ContractError("score_benchmark: no prediction for " + missing);

  BenchReport report;
  std::size_t total = 0, correct = 0;
  for (const auto& item : gold) {
    auto& s = report.subsets[to_string(item.modality)];
    const bool ok = normalize_answer(predictions.at(item.id)) == item.answer;
    s.count += 1;
    s.correct += ok;
    total += 1;
    correct += ok;
  }
  for (auto& [tag, s] : report.subsets) s.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.count);
  report.overall = total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  return report;
}

std::string BenchReport::to_json() const {
  json j{{"overall", overall}, {"subsets", json::object()}};
  for (const auto& [tag, s] : subsets) j["subsets"][tag] = {{"count", s.count}, {"correct", s.correct}, {"accuracy", s.accuracy}};
  return j.dump(2);
}

}  // namespace spectrafuse
