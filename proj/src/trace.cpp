#include "tencache/trace.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace tencache {

using nlohmann::json;

bool ExecutionTrace::has_tensor(TensorId id) const {
  return std::any_of(tensors.begin(), tensors.end(),
                     [id](const TensorDescriptor& t) { return t.id == id; });
}

const TensorDescriptor& ExecutionTrace::tensor(TensorId id) const {
  for (const auto& t : tensors)
    if (t.id == id) return t;
  throw TraceError("unknown tensor id " + std::to_string(id));
}

std::vector<std::pair<TensorId, TensorId>> ExecutionTrace::optimizer_pairs() const {
  std::unordered_map<TensorId, TensorKind> kind_of;
  for (const auto& t : tensors) kind_of[t.id] = t.kind;
  std::vector<std::pair<TensorId, TensorId>> pairs;
  for (const auto& s : steps) {
    if (s.phase != Phase::OptimizerUpdate) continue;
    TensorId state = 0, param = 0;
    bool have_state = false, have_param = false;
    for (TensorId id : s.tensor_ids) {
      if (kind_of.at(id) == TensorKind::OptStateFP32) {
        state = id;
        have_state = true;
      } else {
        param = id;
        have_param = true;
      }
    }
    if (have_state) pairs.emplace_back(state, have_param ? param : 0);
  }
  return pairs;
}

namespace {

const char* kind_tag(TensorKind k) { return k == TensorKind::ParamFP16 ? "p16" : "o32"; }

TensorKind kind_from_tag(const std::string& s, int line) {
  if (s == "p16") return TensorKind::ParamFP16;
  if (s == "o32") return TensorKind::OptStateFP32;
  throw TraceError("line " + std::to_string(line) + ": unknown tensor kind '" + s + "'");
}

Phase phase_from_tag(const std::string& s, int line) {
  if (s == "f") return Phase::Forward;
  if (s == "b") return Phase::Backward;
  if (s == "o") return Phase::OptimizerUpdate;
  throw TraceError("line " + std::to_string(line) + ": unknown phase '" + s + "'");
}

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed, int line) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok)
      throw TraceError("line " + std::to_string(line) + ": unknown key '" + it.key() + "'");
  }
}

// Forward layer sequence collapsed to one entry per run of equal layers.
std::vector<std::uint32_t> collapsed_layer_order(const ExecutionTrace& trace, Phase phase) {
  std::unordered_map<TensorId, std::uint32_t> layer_of;
  for (const auto& t : trace.tensors) layer_of[t.id] = t.layer;
  std::vector<std::uint32_t> order;
  for (const auto& s : trace.steps) {
    if (s.phase != phase) continue;
    for (TensorId id : s.tensor_ids) {
      std::uint32_t layer = layer_of.at(id);
      if (order.empty() || order.back() != layer) order.push_back(layer);
    }
  }
  return order;
}

}  // namespace

void validate_trace(const ExecutionTrace& trace) {
  std::unordered_map<TensorId, const TensorDescriptor*> by_id;
  for (const auto& t : trace.tensors) {
    if (t.size_bytes == 0)
      throw TraceError("tensor " + std::to_string(t.id) + ": size_bytes must be positive");
    if (!by_id.emplace(t.id, &t).second)
      throw TraceError("tensor " + std::to_string(t.id) + ": duplicate id");
  }
  if (trace.iterations == 0) throw TraceError("iterations must be positive");

  int last_phase = -1;
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const TraceStep& s = trace.steps[i];
    if (s.step_index != i)
      throw TraceError("step " + std::to_string(i) + ": step_index " +
                       std::to_string(s.step_index) + " out of order");
    if (s.tensor_ids.empty())
      throw TraceError("step " + std::to_string(i) + ": empty tensor_ids");
    if (s.compute_us < 0)
      throw TraceError("step " + std::to_string(i) + ": negative compute_us");
    int phase = static_cast<int>(s.phase);
    if (phase < last_phase)
      throw TraceError("step " + std::to_string(i) + ": phase order violation (" +
                       to_string(s.phase) + " after later phase)");
    last_phase = phase;
    for (TensorId id : s.tensor_ids) {
      auto it = by_id.find(id);
      if (it == by_id.end())
        throw TraceError("step " + std::to_string(i) + ": dangling tensor id " +
                         std::to_string(id));
      const TensorDescriptor& t = *it->second;
      if ((s.phase == Phase::Forward || s.phase == Phase::Backward) &&
          t.kind != TensorKind::ParamFP16)
        throw TraceError("step " + std::to_string(i) + ": " + to_string(s.phase) +
                         " step references non-parameter tensor " + std::to_string(id));
    }
    if (s.phase == Phase::OptimizerUpdate) {
      int states = 0;
      for (TensorId id : s.tensor_ids)
        if (by_id.at(id)->kind == TensorKind::OptStateFP32) ++states;
      if (states != 1)
        throw TraceError("step " + std::to_string(i) +
                         ": optimizer step must reference exactly one optimizer state");
    }
  }

  // Each state updated once; each param paired with at most one state.
  std::set<TensorId> seen_states, seen_params;
  for (const auto& [state, param] : trace.optimizer_pairs()) {
    if (!seen_states.insert(state).second)
      throw TraceError("optimizer state " + std::to_string(state) + " updated more than once");
    if (param != 0 && !seen_params.insert(param).second)
      throw TraceError("parameter " + std::to_string(param) + " paired with multiple states");
  }

  // Backward walks layers in exactly the reverse of the forward order.
  auto fwd = collapsed_layer_order(trace, Phase::Forward);
  auto bwd = collapsed_layer_order(trace, Phase::Backward);
  if (!bwd.empty()) {
    std::reverse(fwd.begin(), fwd.end());
    if (fwd != bwd)
      throw TraceError("backward layer order is not the reverse of forward layer order");
  }
}

ExecutionTrace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TraceError("cannot open trace file: " + path);

  ExecutionTrace trace;
  std::string line;
  int lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::parse_error& e) {
      throw TraceError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!rec.is_object())
      throw TraceError("line " + std::to_string(lineno) + ": record must be an object");

    if (!have_header) {
      reject_unknown_keys(rec, {"v", "iters"}, lineno);
      if (!rec.contains("v") || rec.at("v").get<int>() != 1)
        throw TraceError("line " + std::to_string(lineno) + ": missing or unsupported header");
      if (rec.contains("iters")) trace.iterations = rec.at("iters").get<std::uint32_t>();
      have_header = true;
      continue;
    }

    reject_unknown_keys(rec, {"t", "s"}, lineno);
    if (rec.contains("t")) {
      const json& t = rec.at("t");
      reject_unknown_keys(t, {"id", "size", "kind", "layer"}, lineno);
      TensorDescriptor d;
      d.id = t.at("id").get<TensorId>();
      d.size_bytes = t.at("size").get<std::uint64_t>();
      d.kind = kind_from_tag(t.at("kind").get<std::string>(), lineno);
      d.layer = t.at("layer").get<std::uint32_t>();
      trace.tensors.push_back(d);
    } else if (rec.contains("s")) {
      const json& s = rec.at("s");
      reject_unknown_keys(s, {"i", "phase", "ids", "us"}, lineno);
      TraceStep step;
      step.step_index = s.at("i").get<std::uint32_t>();
      step.phase = phase_from_tag(s.at("phase").get<std::string>(), lineno);
      step.tensor_ids = s.at("ids").get<std::vector<TensorId>>();
      step.compute_us = s.at("us").get<double>();
      trace.steps.push_back(step);
    } else {
      throw TraceError("line " + std::to_string(lineno) + ": record must hold 't' or 's'");
    }
  }
  if (!have_header) throw TraceError("empty trace file: " + path);
  validate_trace(trace);
  return trace;
}

void save_trace(const ExecutionTrace& trace, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TraceError("cannot write trace file: " + path);
  json header = {{"v", 1}, {"iters", trace.iterations}};
  out << header.dump() << "\n";
  for (const auto& t : trace.tensors) {
    json rec = {{"t",
                 {{"id", t.id},
                  {"size", t.size_bytes},
                  {"kind", kind_tag(t.kind)},
                  {"layer", t.layer}}}};
    out << rec.dump() << "\n";
  }
  for (const auto& s : trace.steps) {
    json rec = {{"s",
                 {{"i", s.step_index},
                  {"phase", to_string(s.phase)},
                  {"ids", s.tensor_ids},
                  {"us", s.compute_us}}}};
    out << rec.dump() << "\n";
  }
}

ExecutionTrace synthesize_transformer_trace(std::uint32_t layers, std::uint32_t tensors_per_layer,
                                            const SizeProfile& profile, double compute_us_per_byte,
                                            std::uint64_t seed, std::uint32_t iterations,
                                            double opt_us_per_byte, bool optimizer_steps) {
  if (layers == 0) throw TraceError("layers must be >= 1");
  if (tensors_per_layer == 0) throw TraceError("tensors_per_layer must be >= 1");
  if (profile.choices.empty()) throw TraceError("size profile must offer at least one size");
  for (std::uint64_t s : profile.choices)
    if (s == 0) throw TraceError("size profile sizes must be positive");

  ExecutionTrace trace;
  trace.iterations = iterations;
  std::mt19937_64 rng(seed);

  const std::uint32_t n_params = layers * tensors_per_layer;
  std::vector<TensorId> forward_order;
  for (std::uint32_t layer = 0; layer < layers; ++layer) {
    // One size per layer, mirroring per-layer size variation.
    std::uint64_t size = profile.choices[rng() % profile.choices.size()];
    for (std::uint32_t j = 0; j < tensors_per_layer; ++j) {
      TensorDescriptor d;
      d.id = static_cast<TensorId>(trace.tensors.size() + 1);
      d.size_bytes = size;
      d.kind = TensorKind::ParamFP16;
      d.layer = layer;
      trace.tensors.push_back(d);
      forward_order.push_back(d.id);
    }
  }
  if (optimizer_steps) {
    for (std::uint32_t i = 0; i < n_params; ++i) {
      const TensorDescriptor& p = trace.tensors[i];
      TensorDescriptor d;
      d.id = n_params + 1 + i;
      d.size_bytes = p.size_bytes * kOptStateBytesPerParamByte;
      d.kind = TensorKind::OptStateFP32;
      d.layer = p.layer;
      trace.tensors.push_back(d);
    }
  }

  std::uint32_t index = 0;
  auto push_param_step = [&](Phase phase, TensorId id) {
    TraceStep s;
    s.step_index = index++;
    s.phase = phase;
    s.tensor_ids = {id};
    s.compute_us = compute_us_per_byte * static_cast<double>(trace.tensor(id).size_bytes);
    trace.steps.push_back(s);
  };
  for (TensorId id : forward_order) push_param_step(Phase::Forward, id);
  for (auto it = forward_order.rbegin(); it != forward_order.rend(); ++it)
    push_param_step(Phase::Backward, *it);
  if (optimizer_steps) {
    for (std::uint32_t i = 0; i < n_params; ++i) {
      TensorId param = forward_order[i];
      TensorId state = n_params + 1 + i;
      TraceStep s;
      s.step_index = index++;
      s.phase = Phase::OptimizerUpdate;
      s.tensor_ids = {state, param};
      s.compute_us = opt_us_per_byte * static_cast<double>(trace.tensor(state).size_bytes);
      trace.steps.push_back(s);
    }
  }

  validate_trace(trace);
  return trace;
}

TensorCensus tensor_census(const ExecutionTrace& trace, TensorKind kind) {
  TensorCensus census;
  for (const auto& t : trace.tensors)
    if (t.kind == kind) ++census[t.size_bytes];
  return census;
}

}  // namespace tencache
