// SPDX-License-Identifier: Apache-2.0
#include "spectrafuse/checkpoint.hpp"

#include <algorithm>
#include <map>
#include <iomanip>
#include <sstream>

#include "binary_io.hpp"

namespace spectrafuse {

namespace {

constexpr char kMagic[4] = {'T', 'V', 'L', 'B'};

Tensor snapshot(const Tensor& t) {
  return Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
}

Tensor vector_tensor(const std::vector<double>& v) { return Tensor({v.size()}, v); }

void put_tensor(ByteWriter& w, const Tensor& t) { w.append(encode_tensor(t)); }

Tensor get_tensor(ByteReader& r) {
  std::size_t offset = r.position();
  Tensor t = decode_tensor(r.data(), offset);
  r.seek(offset);
  return t;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << "0x" << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

void check_fingerprint(const CheckpointBundle& b, const TrainConfig& cfg) {
  const auto expected = cfg.fingerprint();
  if (b.fingerprint != expected) {
    throw VersionError("checkpoint fingerprint " + hex(b.fingerprint) + " does not match configuration fingerprint " +
                       hex(expected));
  }
}

void copy_into(Tensor& dst, const Tensor& src) {
  auto out = dst.mutable_data();
  std::copy(src.data().begin(), src.data().end(), out.begin());
}

// Validates every record against the live parameters and returns the
// (destination, source) pairs to copy.
std::vector<std::pair<Tensor*, const Tensor*>> plan_params(const CheckpointBundle& b, Model& model) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& r : b.params) {
    if (!by_name.emplace(r.name, &r.value).second) throw ContractError("checkpoint: duplicate record '" + r.name + "'");
  }
  std::vector<std::pair<Tensor*, const Tensor*>> plan;
  model.visit([&](const std::string& name, Tensor& t) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ContractError("checkpoint: missing parameter '" + name + "'");
    if (it->second->shape() != t.shape()) {
      throw DimensionError("checkpoint: parameter '" + name + "' has shape " + shape_to_string(it->second->shape()) +
                           ", model expects " + shape_to_string(t.shape()));
    }
    plan.emplace_back(&t, it->second);
    by_name.erase(it);
  });
  if (!by_name.empty()) throw ContractError("checkpoint: unknown parameter '" + by_name.begin()->first + "'");
  return plan;
}

}  // namespace

CheckpointBundle capture_model(const TrainConfig& cfg, Model& model) {
  CheckpointBundle b;
  b.fingerprint = cfg.fingerprint();
  b.config_text = cfg.to_text();
  model.visit([&](const std::string& name, Tensor& t) { b.params.push_back({name, snapshot(t)}); });
  return b;
}

CheckpointBundle capture_state(TrainingState& state) {
  CheckpointBundle b = capture_model(state.config, state.model);
  b.step = state.step;
  std::ostringstream rng;
  rng << state.rng;
  b.rng_state = rng.str();
  for (const auto& g : state.groups) {
    CheckpointBundle::GroupState gs{g.name, g.step, {}};
    for (const auto& s : g.slots) gs.slots.push_back({s.name, vector_tensor(s.m), vector_tensor(s.v)});
    b.groups.push_back(std::move(gs));
  }
  return b;
}

std::vector<std::uint8_t> encode_checkpoint(const CheckpointBundle& b) {
  ByteWriter w;
  w.bytes(kMagic, 4);
  w.u32(b.version);
  w.u64(b.fingerprint);
  w.str(b.config_text);
  w.u64(b.step);
  w.str(b.rng_state);
  w.u32(static_cast<std::uint32_t>(b.params.size()));
  for (const auto& r : b.params) {
    w.str(r.name);
    put_tensor(w, r.value);
  }
  w.u32(static_cast<std::uint32_t>(b.groups.size()));
  for (const auto& g : b.groups) {
    w.str(g.name);
    w.u64(g.step);
    w.u32(static_cast<std::uint32_t>(g.slots.size()));
    for (const auto& s : g.slots) {
      w.str(s.name);
      put_tensor(w, s.m);
      put_tensor(w, s.v);
    }
  }
  return std::move(w).take();
}

CheckpointBundle decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, 0);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (!std::equal(magic, magic + 4, kMagic)) throw ParseError("checkpoint: bad magic, expected TVLB", 0);
  CheckpointBundle b;
  b.version = r.u32("version");
  if (b.version != kCheckpointVersion) {
    throw VersionError("checkpoint: format version " + std::to_string(b.version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  b.fingerprint = r.u64("fingerprint");
  b.config_text = r.str("config text");
  b.step = r.u64("step counter");
  b.rng_state = r.str("rng state");
  const auto n = r.u32("record count");
  for (std::uint32_t i = 0; i < n; ++i) {
    auto name = r.str("record name");
    b.params.push_back({std::move(name), get_tensor(r)});
  }
  const auto groups = r.u32("group count");
  for (std::uint32_t i = 0; i < groups; ++i) {
    CheckpointBundle::GroupState g;
    g.name = r.str("group name");
    g.step = r.u64("group step");
    const auto slots = r.u32("slot count");
    for (std::uint32_t k = 0; k < slots; ++k) {
      CheckpointBundle::MomentSlot s;
      s.name = r.str("slot name");
      s.m = get_tensor(r);
      s.v = get_tensor(r);
      g.slots.push_back(std::move(s));
    }
    b.groups.push_back(std::move(g));
  }
  if (r.remaining() != 0) throw ParseError("checkpoint: trailing bytes after last record", r.position());
  return b;
}

void save_checkpoint(const std::string& path, const CheckpointBundle& bundle) {
  write_file_bytes(path, encode_checkpoint(bundle));
}

CheckpointBundle load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

void restore_model(const CheckpointBundle& bundle, const TrainConfig& cfg, Model& model) {
  check_fingerprint(bundle, cfg);
  for (auto [dst, src] : plan_params(bundle, model)) copy_into(*dst, *src);
}

void restore_state(const CheckpointBundle& bundle, TrainingState& state) {
  check_fingerprint(bundle, state.config);
  if (bundle.groups.size() != state.groups.size()) {
    throw ContractError("checkpoint: holds " + std::to_string(bundle.groups.size()) + " optimizer groups, expected " +
                        std::to_string(state.groups.size()));
  }
  for (std::size_t i = 0; i < state.groups.size(); ++i) {
    const auto& saved = bundle.groups[i];
    const auto& live = state.groups[i];
    if (saved.name != live.name || saved.slots.size() != live.slots.size()) {
      throw ContractError("checkpoint: optimizer group '" + saved.name + "' does not match '" + live.name + "'");
    }
    for (std::size_t k = 0; k < live.slots.size(); ++k) {
      const auto& s = saved.slots[k];
      if (s.name != live.slots[k].name || s.m.numel() != live.slots[k].m.size() ||
          s.v.numel() != live.slots[k].v.size()) {
        throw ContractError("checkpoint: optimizer slot '" + s.name + "' does not match '" + live.slots[k].name + "'");
      }
    }
  }
  Rng rng;
  std::istringstream rs(bundle.rng_state);
  rs >> rng;
  if (!rs) throw ContractError("checkpoint: unreadable rng state");
  const auto plan = plan_params(bundle, state.model);

  for (auto [dst, src] : plan) copy_into(*dst, *src);
  for (std::size_t i = 0; i < state.groups.size(); ++i) {
    auto& live = state.groups[i];
    live.step = bundle.groups[i].step;
    for (std::size_t k = 0; k < live.slots.size(); ++k) {
      const auto& s = bundle.groups[i].slots[k];
      live.slots[k].m.assign(s.m.data().begin(), s.m.data().end());
      live.slots[k].v.assign(s.v.data().begin(), s.v.data().end());
    }
  }
  state.rng = rng;
  state.step = bundle.step;
}

}  // namespace spectrafuse
