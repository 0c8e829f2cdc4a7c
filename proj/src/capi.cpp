// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/spectrafuse.h"

#include <cstring>
#include <new>
#include <string>

#include <json.hpp>

#include "spectrafuse/runner.hpp"

struct sf_config {
  spectrafuse::TrainConfig cfg;
};

struct sf_model {
  spectrafuse::TrainConfig cfg;
  spectrafuse::Model model;
};

namespace {

using namespace spectrafuse;

thread_local std::string g_last_error;

sf_status fail(sf_status status, const std::string& message) {
  g_last_error = message;
  return status;
}

// Maps the library's exception hierarchy onto status codes.
template <typename F>
sf_status guarded(F&& fn) {
  try {
    g_last_error.clear();
    return fn();
  } catch (const DimensionError& e) {
    return fail(SF_ERR_DIMENSION, e.what());
  } catch (const ContractError& e) {
    return fail(SF_ERR_CONTRACT, e.what());
  } catch (const IoError& e) {
    return fail(SF_ERR_IO, e.what());
  } catch (const ParseError& e) {
    return fail(SF_ERR_PARSE, e.what());
  } catch (const VersionError& e) {
    return fail(SF_ERR_VERSION, e.what());
  } catch (const std::bad_alloc&) {
    return fail(SF_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return fail(SF_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(SF_ERR_INTERNAL, "unknown error");
  }
}

sf_status null_argument(const char* name) {
  return fail(SF_ERR_INVALID_ARGUMENT, std::string("argument '") + name + "' must not be null");
}

#define SF_REQUIRE(p) \
  if (!(p)) return null_argument(#p)

sf_status copy_out(const std::string& s, char* buf, std::size_t cap, std::size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (!buf || cap < s.size() + 1) {
    return fail(SF_ERR_BUFFER_TOO_SMALL, "buffer of " + std::to_string(cap) + " bytes cannot hold " +
                                             std::to_string(s.size() + 1));
  }
  std::memcpy(buf, s.c_str(), s.size() + 1);
  return SF_OK;
}

LineSink make_sink(sf_line_fn fn, void* user) {
  if (!fn) return {};
  return [fn, user](const std::string& line) { fn(line.c_str(), user); };
}

std::string str_or(const char* s, const char* fallback) { return s && *s ? s : fallback; }

ForwardResult forward_indexed(const sf_model* model, const char* data_dir, const char* split, std::size_t index,
                              const char* subset, const char* variant) {
  const auto samples = load_samples(data_dir, split);
  if (index >= samples.size()) {
    throw ContractError("sample index " + std::to_string(index) + " out of range for split '" + split + "' (" +
                        std::to_string(samples.size()) + " samples)");
  }
  const Sample& s = samples[index];
  const Modality m = subset ? parse_modality(subset) : s.item.modality;
  ForwardOptions opts;
  opts.variant = variant_flags(model->cfg, str_or(variant, "full"));
  return forward_sample(model->model, s, m, opts);
}

}  // namespace

extern "C" {

const char* sf_version(void) { return "0.1.0"; }

const char* sf_status_name(sf_status status) {
  switch (status) {
    case SF_OK: return "ok";
    case SF_ERR_INVALID_ARGUMENT: return "invalid-argument";
    case SF_ERR_DIMENSION: return "dimension";
    case SF_ERR_CONTRACT: return "contract";
    case SF_ERR_IO: return "io";
    case SF_ERR_PARSE: return "parse";
    case SF_ERR_VERSION: return "version";
    case SF_ERR_BUFFER_TOO_SMALL: return "buffer-too-small";
    case SF_ERR_INTERNAL: return "internal";
  }
  return "unknown";
}

const char* sf_last_error(void) { return g_last_error.c_str(); }

sf_status sf_config_new(sf_config** out) {
  SF_REQUIRE(out);
  return guarded([&] {
    *out = new sf_config{};
    return SF_OK;
  });
}

sf_status sf_config_load(const char* path, sf_config** out) {
  SF_REQUIRE(path);
  SF_REQUIRE(out);
  return guarded([&] {
    *out = new sf_config{load_config(path)};
    return SF_OK;
  });
}

sf_status sf_config_parse(const char* text, sf_config** out) {
  SF_REQUIRE(text);
  SF_REQUIRE(out);
  return guarded([&] {
    *out = new sf_config{parse_config(text)};
    return SF_OK;
  });
}

void sf_config_free(sf_config* cfg) { delete cfg; }

sf_status sf_config_set(sf_config* cfg, const char* key, const char* value) {
  SF_REQUIRE(cfg);
  SF_REQUIRE(key);
  SF_REQUIRE(value);
  return guarded([&] {
    cfg->cfg.set(key, value);
    return SF_OK;
  });
}

sf_status sf_config_override(sf_config* cfg, const char* assignment) {
  SF_REQUIRE(cfg);
  SF_REQUIRE(assignment);
  return guarded([&] {
    apply_override(cfg->cfg, assignment);
    return SF_OK;
  });
}

sf_status sf_config_get(const sf_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  SF_REQUIRE(cfg);
  SF_REQUIRE(key);
  return guarded([&] { return copy_out(cfg->cfg.get(key), buf, cap, needed); });
}

sf_status sf_config_validate(const sf_config* cfg) {
  SF_REQUIRE(cfg);
  return guarded([&] {
    cfg->cfg.validate();
    return SF_OK;
  });
}

sf_status sf_config_to_text(const sf_config* cfg, char* buf, size_t cap, size_t* needed) {
  SF_REQUIRE(cfg);
  return guarded([&] { return copy_out(cfg->cfg.to_text(), buf, cap, needed); });
}

sf_status sf_config_fingerprint(const sf_config* cfg, uint64_t* out) {
  SF_REQUIRE(cfg);
  SF_REQUIRE(out);
  return guarded([&] {
    *out = cfg->cfg.fingerprint();
    return SF_OK;
  });
}

sf_status sf_model_init(const sf_config* cfg, sf_model** out) {
  SF_REQUIRE(cfg);
  SF_REQUIRE(out);
  return guarded([&] {
    cfg->cfg.validate();
    *out = new sf_model{cfg->cfg, Model::init(cfg->cfg)};
    return SF_OK;
  });
}

sf_status sf_model_load(const sf_config* cfg, const char* path, sf_model** out) {
  SF_REQUIRE(cfg);
  SF_REQUIRE(path);
  SF_REQUIRE(out);
  return guarded([&] {
    cfg->cfg.validate();
    auto bundle = load_checkpoint(path);
    auto* m = new sf_model{cfg->cfg, Model::init(cfg->cfg)};
    try {
      restore_model(bundle, cfg->cfg, m->model);
    } catch (...) {
      delete m;
      throw;
    }
    *out = m;
    return SF_OK;
  });
}

sf_status sf_model_save(sf_model* model, const char* path) {
  SF_REQUIRE(model);
  SF_REQUIRE(path);
  return guarded([&] {
    save_checkpoint(path, capture_model(model->cfg, model->model));
    return SF_OK;
  });
}

void sf_model_free(sf_model* model) { delete model; }

sf_status sf_model_logits(const sf_model* model, const char* data_dir, const char* split, size_t index,
                          const char* subset, const char* variant, double* out, size_t cap, size_t* count) {
  SF_REQUIRE(model);
  SF_REQUIRE(data_dir);
  SF_REQUIRE(split);
  return guarded([&] {
    const auto r = forward_indexed(model, data_dir, split, index, subset, variant);
    const auto values = r.logits.data();
    if (count) *count = values.size();
    if (!out || cap < values.size()) {
      return fail(SF_ERR_BUFFER_TOO_SMALL, "logit buffer holds " + std::to_string(cap) + " of " +
                                               std::to_string(values.size()) + " values");
    }
    std::copy(values.begin(), values.end(), out);
    return SF_OK;
  });
}

sf_status sf_model_answer(const sf_model* model, const char* data_dir, const char* split, size_t index,
                          const char* subset, const char* variant, char* buf, size_t cap, size_t* needed) {
  SF_REQUIRE(model);
  SF_REQUIRE(data_dir);
  SF_REQUIRE(split);
  return guarded([&] {
    const auto samples = load_samples(data_dir, split);
    if (index >= samples.size()) {
      throw ContractError("sample index " + std::to_string(index) + " out of range for split '" +
                          std::string(split) + "'");
    }
    const Sample& s = samples[index];
    const Modality m = subset ? parse_modality(subset) : s.item.modality;
    const auto answer =
        infer_answer(model->model, s, m, variant_flags(model->cfg, str_or(variant, "full")));
    return copy_out(answer, buf, cap, needed);
  });
}

size_t sf_variant_count(void) { return variant_names().size(); }

const char* sf_variant_name(size_t index) {
  const auto& names = variant_names();
  return index < names.size() ? names[index].c_str() : nullptr;
}

sf_status sf_run_gen_data(const sf_config* cfg, const char* out_dir, sf_line_fn sink, void* user) {
  SF_REQUIRE(cfg);
  SF_REQUIRE(out_dir);
  return guarded([&] {
    const auto manifest = run_gen_data(cfg->cfg, out_dir);
    nlohmann::json j{{"stage", "gen-data"}, {"dir", out_dir}, {"seed", manifest.seed}, {"scenes", manifest.scenes}};
    for (const auto& [split, subsets] : manifest.splits) {
      for (const auto& [tag, c] : subsets) j["splits"][split][tag] = {{"items", c.items}, {"yes", c.yes}};
    }
    if (sink) sink(j.dump().c_str(), user);
    return SF_OK;
  });
}

sf_status sf_run_pretrain_mae(const sf_config* cfg, const char* data_dir, const char* out_path, sf_line_fn sink,
                              void* user) {
  SF_REQUIRE(cfg);
  SF_REQUIRE(data_dir);
  SF_REQUIRE(out_path);
  return guarded([&] {
    run_pretrain_mae(cfg->cfg, data_dir, out_path, make_sink(sink, user));
    return SF_OK;
  });
}

sf_status sf_run_pretrain_lm(const sf_config* cfg, const char* init_path, const char* out_path, sf_line_fn sink,
                             void* user) {
  SF_REQUIRE(cfg);
  SF_REQUIRE(out_path);
  return guarded([&] {
    run_pretrain_lm(cfg->cfg, str_or(init_path, ""), out_path, make_sink(sink, user));
    return SF_OK;
  });
}

sf_status sf_run_train(const sf_config* cfg, const char* data_dir, const char* init_path, const char* out_dir,
                       sf_line_fn sink, void* user) {
  SF_REQUIRE(cfg);
  SF_REQUIRE(data_dir);
  SF_REQUIRE(out_dir);
  return guarded([&] {
    run_train(cfg->cfg, data_dir, str_or(init_path, ""), out_dir, make_sink(sink, user));
    return SF_OK;
  });
}

sf_status sf_run_eval(const sf_config* cfg, const char* checkpoint, const char* data_dir, const char* subset,
                      const char* variant, sf_line_fn sink, void* user) {
  SF_REQUIRE(cfg);
  SF_REQUIRE(checkpoint);
  SF_REQUIRE(data_dir);
  return guarded([&] {
    std::optional<Modality> filter;
    const std::string sub = str_or(subset, "all");
    if (sub != "all") filter = parse_modality(sub);
    const auto report = run_eval(cfg->cfg, checkpoint, data_dir, filter, str_or(variant, "full"));
    if (sink) sink(report.c_str(), user);
    return SF_OK;
  });
}

sf_status sf_run_gradcheck(const sf_config* cfg, size_t max_per_param, sf_line_fn sink, void* user,
                           size_t* failures) {
  SF_REQUIRE(cfg);
  return guarded([&] {
    std::size_t total = 0;
    for (const auto& r : run_gradcheck(cfg->cfg, max_per_param, make_sink(sink, user))) total += r.failures;
    if (failures) *failures = total;
    return SF_OK;
  });
}

sf_status sf_run_ablate(const sf_config* cfg, const char* data_dir, const char* init_path, const char* variant,
                        const char* out_dir, sf_line_fn sink, void* user) {
  SF_REQUIRE(cfg);
  SF_REQUIRE(data_dir);
  SF_REQUIRE(variant);
  SF_REQUIRE(out_dir);
  return guarded([&] {
    const auto summary =
        run_ablate(cfg->cfg, data_dir, str_or(init_path, ""), variant, out_dir, make_sink(sink, user));
    if (sink) sink(summary.c_str(), user);
    return SF_OK;
  });
}

}  // extern "C"
