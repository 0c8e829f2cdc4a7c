// SPDX-License-Identifier: Apache-2.0
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spectrafuse/spectrafuse.h"

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitGradcheck = 3;

struct Options {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::vector<std::string> overrides;
  std::string variant = "full";
  std::string subset = "all";
  std::size_t probes = 8;
};

class Failure : public std::runtime_error {
 public:
  Failure(const std::string& what, sf_status status) : std::runtime_error(what), status_(status) {}
  sf_status status() const { return status_; }

 private:
  sf_status status_;
};

void check(sf_status s, const std::string& context) {
  if (s != SF_OK) throw Failure(context + ": " + sf_last_error(), s);
}

struct ConfigHandle {
  sf_config* ptr = nullptr;
  ~ConfigHandle() { sf_config_free(ptr); }
};

std::string config_value(const sf_config* cfg, const char* key) {
  std::size_t needed = 0;
  sf_config_get(cfg, key, nullptr, 0, &needed);
  std::string out(needed, '\0');
  check(sf_config_get(cfg, key, out.data(), out.size(), &needed), std::string("config key ") + key);
  out.resize(needed - 1);
  return out;
}

void print_line(const char* line, void*) {
  std::fputs(line, stdout);
  std::fputc('\n', stdout);
  std::fflush(stdout);
}

void capture_line(const char* line, void* user) {
  static_cast<std::string*>(user)->assign(line);
  print_line(line, nullptr);
}

// Loads the configuration, applies --seed and overrides, and validates it.
// Nothing touches the filesystem before this succeeds.
void build_config(const Options& o, ConfigHandle& cfg) {
  if (o.config_path.empty()) {
    check(sf_config_new(&cfg.ptr), "config");
  } else {
    check(sf_config_load(o.config_path.c_str(), &cfg.ptr), "config " + o.config_path);
  }
  if (o.seed_set) check(sf_config_set(cfg.ptr, "seed", std::to_string(o.seed).c_str()), "--seed");
  for (const auto& ov : o.overrides) check(sf_config_override(cfg.ptr, ov.c_str()), "--override " + ov);
  check(sf_config_validate(cfg.ptr), "config");
}

std::string out_path(const Options& o, const std::string& fallback_dir, const std::string& file) {
  const std::string dir = o.out.empty() ? fallback_dir : o.out;
  std::filesystem::create_directories(dir);
  return (std::filesystem::path(dir) / file).string();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f || !(f << text << '\n')) throw Failure("cannot write " + path, SF_ERR_IO);
}

int run(const std::string& command, const Options& o) {
  ConfigHandle cfg;
  build_config(o, cfg);
  const std::string data_dir = config_value(cfg.ptr, "data_dir");
  const std::string init = config_value(cfg.ptr, "init_checkpoint");

  if (command == "gen-data") {
    check(sf_run_gen_data(cfg.ptr, o.out.empty() ? data_dir.c_str() : o.out.c_str(), print_line, nullptr),
          "gen-data");
  } else if (command == "pretrain-mae") {
    check(sf_run_pretrain_mae(cfg.ptr, data_dir.c_str(), out_path(o, ".", "mae.tvlb").c_str(), print_line, nullptr),
          "pretrain-mae");
  } else if (command == "pretrain-lm") {
    check(sf_run_pretrain_lm(cfg.ptr, init.c_str(), out_path(o, ".", "lm.tvlb").c_str(), print_line, nullptr),
          "pretrain-lm");
  } else if (command == "train") {
    check(sf_run_train(cfg.ptr, data_dir.c_str(), init.c_str(), o.out.empty() ? "." : o.out.c_str(), print_line,
                       nullptr),
          "train");
  } else if (command == "eval") {
    const std::string ckpt = config_value(cfg.ptr, "checkpoint");
    std::string report;
    check(sf_run_eval(cfg.ptr, ckpt.c_str(), data_dir.c_str(), o.subset.c_str(), o.variant.c_str(), capture_line,
                      &report),
          "eval");
    if (!o.out.empty()) write_file(out_path(o, o.out, "eval.json"), report);
  } else if (command == "gradcheck") {
    std::size_t failures = 0;
    check(sf_run_gradcheck(cfg.ptr, o.probes, print_line, nullptr, &failures), "gradcheck");
    if (failures > 0) {
      std::cerr << "gradcheck: " << failures << " entries out of tolerance\n";
      return kExitGradcheck;
    }
  } else if (command == "ablate") {
    check(sf_run_ablate(cfg.ptr, data_dir.c_str(), init.c_str(), o.variant.c_str(),
                        o.out.empty() ? "ablation" : o.out.c_str(), print_line, nullptr),
          "ablate");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Text-guided RGB and thermal fusion: data, training and evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", sf_version());

  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "Configuration file (key = value lines)")->check(CLI::ExistingFile);
    sub->add_option_function<std::uint64_t>(
        "--seed",
        [&](const std::uint64_t& s) {
          o.seed = s;
          o.seed_set = true;
        },
        "Master seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--override", o.overrides, "KEY=VALUE configuration override (repeatable)")
        ->allow_extra_args(false)
        ->take_all();
  };

  const std::vector<std::pair<std::string, std::string>> commands{
      {"gen-data", "Generate the synthetic dataset"},
      {"pretrain-mae", "Masked-autoencoder pretraining of the image encoders"},
      {"pretrain-lm", "Pretrain the frozen language decoder"},
      {"train", "Train the fusion block and thermal encoder"},
      {"eval", "Score a checkpoint on the eval split"},
      {"gradcheck", "Finite-difference check of every trainable component"},
      {"ablate", "Train and score an ablation variant next to the full model"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    add_common(sub);
    if (name == "ablate") {
      std::vector<std::string> names;
      for (std::size_t i = 0; i < sf_variant_count(); ++i) names.emplace_back(sf_variant_name(i));
      sub->add_option("--variant", o.variant, "Ablation variant")->required()->check(CLI::IsMember(names));
    }
    if (name == "eval") {
      std::vector<std::string> names;
      for (std::size_t i = 0; i < sf_variant_count(); ++i) names.emplace_back(sf_variant_name(i));
      sub->add_option("--subset", o.subset, "Modality subset")->check(CLI::IsMember({"rgb", "ir", "rgb+ir", "all"}));
      sub->add_option("--variant", o.variant, "Inference-time variant")->check(CLI::IsMember(names));
    }
    if (name == "gradcheck") sub->add_option("--probes", o.probes, "Entries probed per tensor")->check(CLI::PositiveNumber);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    return run(app.get_subcommands().front()->get_name(), o);
  } catch (const Failure& e) {
    std::cerr << "error [" << sf_status_name(e.status()) << "] " << e.what() << '\n';
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
  }
  return kExitFailure;
}
