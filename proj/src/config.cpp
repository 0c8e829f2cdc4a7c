// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "spectrafuse/errors.hpp"

namespace spectrafuse {

namespace {

struct FieldInfo {
  std::function<void(TrainConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const TrainConfig&)> get;
  bool architecture = false;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_value(const std::string& key, const std::string& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ContractError("config: " + key + " expects true or false, got '" + v + "'");
  } else if constexpr (std::is_same_v<T, double>) {
    std::size_t used = 0;
    double out = 0.0;
    try {
      out = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != v.size()) throw ContractError("config: " + key + " expects a number, got '" + v + "'");
    return out;
  } else {
    T out{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw ContractError("config: " + key + " expects a non-negative integer, got '" + v + "'");
    }
    return out;
  }
}

template <typename T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<T, double>) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  } else {
    return std::to_string(v);
  }
}

template <typename T>
FieldInfo field(T TrainConfig::*member, bool architecture = false) {
  return FieldInfo{[member](TrainConfig& c, const std::string& key, const std::string& v) {
                     c.*member = parse_value<T>(key, v);
                   },
                   [member](const TrainConfig& c) { return format_value(c.*member); }, architecture};
}

const std::map<std::string, FieldInfo>& fields() {
  using C = TrainConfig;
  static const std::map<std::string, FieldInfo> table{
      {"seed", field(&C::seed)},
      {"image_size", field(&C::image_size, true)},
      {"patch_size", field(&C::patch_size, true)},
      {"dim", field(&C::dim, true)},
      {"heads", field(&C::heads, true)},
      {"encoder_blocks", field(&C::encoder_blocks, true)},
      {"encoder_mlp", field(&C::encoder_mlp, true)},
      {"trainable_blocks", field(&C::trainable_blocks)},
      {"fusion_hidden", field(&C::fusion_hidden, true)},
      {"decoder_blocks", field(&C::decoder_blocks, true)},
      {"decoder_mlp", field(&C::decoder_mlp, true)},
      {"vocab", field(&C::vocab, true)},
      {"max_prompt", field(&C::max_prompt, true)},
      {"mask_ratio", field(&C::mask_ratio)},
      {"mask_rgb", field(&C::mask_rgb)},
      {"mae_ratio", field(&C::mae_ratio)},
      {"pretrain_rgb", field(&C::pretrain_rgb)},
      {"mae_images", field(&C::mae_images)},
      {"mae_steps", field(&C::mae_steps)},
      {"mae_batch", field(&C::mae_batch)},
      {"mae_lr", field(&C::mae_lr)},
      {"lm_steps", field(&C::lm_steps)},
      {"lm_batch", field(&C::lm_batch)},
      {"lm_lr", field(&C::lm_lr)},
      {"lm_questions", field(&C::lm_questions)},
      {"lm_backgrounds", field(&C::lm_backgrounds)},
      {"lambda_align", field(&C::lambda_align)},
      {"lambda_contr", field(&C::lambda_contr)},
      {"lambda_gate", field(&C::lambda_gate)},
      {"tau", field(&C::tau)},
      {"symmetric_nce", field(&C::symmetric_nce)},
      {"align_clean_rgb", field(&C::align_clean_rgb)},
      {"lr_thermal", field(&C::lr_thermal)},
      {"lr_fusion", field(&C::lr_fusion)},
      {"weight_decay", field(&C::weight_decay)},
      {"beta1", field(&C::beta1)},
      {"beta2", field(&C::beta2)},
      {"eps", field(&C::eps)},
      {"warmup_steps", field(&C::warmup_steps)},
      {"cosine_decay", field(&C::cosine_decay)},
      {"grad_clip", field(&C::grad_clip)},
      {"batch_size", field(&C::batch_size)},
      {"epochs", field(&C::epochs)},
      {"text_attention", field(&C::text_attention)},
      {"rgb_attention", field(&C::rgb_attention)},
      {"gated_residual", field(&C::gated_residual)},
      {"scenes", field(&C::scenes)},
      {"eval_fraction", field(&C::eval_fraction)},
      {"data_dir", field(&C::data_dir)},
      {"checkpoint", field(&C::checkpoint)},
      {"init_checkpoint", field(&C::init_checkpoint)},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& TrainConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const auto& [name, info] : fields()) out.push_back(name);
    return out;
  }();
  return k;
}

void TrainConfig::set(const std::string& key, const std::string& value) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ContractError("config: unknown key '" + key + "'");
  it->second.set(*this, key, trim(value));
}

std::string TrainConfig::get(const std::string& key) const {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ContractError("config: unknown key '" + key + "'");
  return it->second.get(*this);
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ContractError("config: " + msg);
  };
  encoder_config().validate();
  if (dim % heads != 0) {
    throw DimensionError("config: dim " + std::to_string(dim) + " is not divisible by heads " + std::to_string(heads));
  }
  require(trainable_blocks <= encoder_blocks, "trainable_blocks exceeds encoder_blocks");
  require(vocab >= Vocabulary::standard().size(),
          "vocab must hold at least " + std::to_string(Vocabulary::standard().size()) + " words");
  require(max_prompt >= 1, "max_prompt must be positive");
  require(mask_ratio >= 0.0 && mask_ratio < 1.0, "mask_ratio must lie in [0, 1)");
  require(mae_ratio > 0.0 && mae_ratio < 1.0, "mae_ratio must lie in (0, 1)");
  require(batch_size >= 1 && mae_batch >= 1 && lm_batch >= 1, "batch sizes must be positive");
  require(mae_images >= 1, "mae_images must be positive");
  require(grad_clip >= 0, "grad_clip must be non-negative");
  require(lr_thermal >= 0 && lr_fusion >= 0 && mae_lr >= 0 && lm_lr >= 0, "learning rates must be non-negative");
  require(weight_decay >= 0, "weight_decay must be non-negative");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "betas must lie in [0, 1)");
  require(eps > 0, "eps must be positive");
  require(eval_fraction >= 0.0 && eval_fraction < 1.0, "eval_fraction must lie in [0, 1)");
  loss_weights().validate();
}

std::uint64_t TrainConfig::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& [name, info] : fields()) {
    if (!info.architecture) continue;
    for (char c : name + "=" + get(name) + ";") {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

std::string TrainConfig::to_text() const {
  std::string out;
  for (const auto& k : keys()) out += k + " = " + get(k) + "\n";
  return out;
}

EncoderConfig TrainConfig::encoder_config() const {
  EncoderConfig c;
  c.image_height = c.image_width = image_size;
  c.patch_size = patch_size;
  c.dim = dim;
  c.blocks = encoder_blocks;
  c.heads = heads;
  c.mlp_hidden = encoder_mlp;
  return c;
}

FusionConfig TrainConfig::fusion_config() const { return FusionConfig{dim, dim, heads, fusion_hidden}; }

DecoderConfig TrainConfig::decoder_config() const {
  return DecoderConfig{dim, heads, decoder_blocks, decoder_mlp, vocab, encoder_config().tokens() + max_prompt};
}

LossWeights TrainConfig::loss_weights() const { return LossWeights{lambda_align, lambda_contr, lambda_gate, tau}; }

AblationFlags TrainConfig::ablation() const {
  AblationFlags f;
  f.text_attention = text_attention;
  f.rgb_attention = rgb_attention;
  f.gated_residual = gated_residual;
  return f;
}

TrainConfig parse_config(const std::string& text) {
  TrainConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError("config line " + std::to_string(number) + ": expected key = value");
    }
    try {
      cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ContractError& e) {
      throw ContractError("config line " + std::to_string(number) + ": " + e.what());
    }
  }
  return cfg;
}

TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ContractError& e) {
    throw ContractError(path + ": " + e.what());
  }
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ContractError("override '" + assignment + "' is not of the form KEY=VALUE");
  }
  cfg.set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

}  // namespace spectrafuse
