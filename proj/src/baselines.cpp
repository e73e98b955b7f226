#include "tencache/baselines.hpp"

#include <algorithm>

namespace tencache {

PolicyKind policy_from_string(const std::string& name) {
  if (name == "tencache") return PolicyKind::TenCache;
  if (name == "tencache+opt") return PolicyKind::TenCachePlusOpt;
  if (name == "zero-infinity") return PolicyKind::ZeroInfinityLike;
  if (name == "l2l") return PolicyKind::L2LLike;
  if (name == "no-offload") return PolicyKind::NoOffload;
  throw ConfigError("unknown policy: " + name);
}

const char* to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::TenCache: return "tencache";
    case PolicyKind::TenCachePlusOpt: return "tencache+opt";
    case PolicyKind::ZeroInfinityLike: return "zero-infinity";
    case PolicyKind::L2LLike: return "l2l";
    case PolicyKind::NoOffload: return "no-offload";
  }
  return "?";
}

namespace {

TransferRequest fetch_request(const ExecutionTrace& trace, TensorId id, Tier src) {
  TransferRequest req;
  req.tensor_id = id;
  req.src = src;
  req.dst = Tier::Gpu;
  req.size_bytes = trace.tensor(id).size_bytes;
  req.kind = TransferRequest::Kind::Prefetch;
  req.via_cpu_staging = src == Tier::Nvme;
  req.src_retains = true;  // the home partition keeps its copy
  return req;
}

TransferRequest drop_request(const ExecutionTrace& trace, TensorId id, Tier home) {
  TransferRequest req;
  req.tensor_id = id;
  req.src = Tier::Gpu;
  req.dst = home;
  req.size_bytes = trace.tensor(id).size_bytes;
  req.kind = TransferRequest::Kind::Evict;
  req.instant = true;  // the home copy is still valid, nothing moves
  req.dst_has_copy = true;
  return req;
}

void index_param_steps(const ExecutionTrace& trace, std::vector<std::size_t>& order,
                       std::map<std::size_t, std::size_t>& pos) {
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    Phase p = trace.steps[i].phase;
    if (p == Phase::Forward || p == Phase::Backward) {
      pos[i] = order.size();
      order.push_back(i);
    }
  }
}

}  // namespace

ZeroInfinityState make_zero_infinity_state(const ExecutionTrace& trace,
                                           const MachineConfig& machine, int lookahead_k) {
  ZeroInfinityState st;
  st.trace = &trace;
  st.lookahead_k = lookahead_k;
  index_param_steps(trace, st.param_step_order, st.param_step_pos);

  std::vector<const TensorDescriptor*> params;
  std::uint64_t param_bytes = 0;
  for (const auto& t : trace.tensors)
    if (t.kind == TensorKind::ParamFP16) {
      params.push_back(&t);
      param_bytes += t.size_bytes;
    }

  if (param_bytes <= machine.gpu_capacity_bytes) {
    st.fits_gpu = true;
    for (const auto* t : params) st.gpu_resident.insert(t->id);
    return st;
  }

  // Offload everything: largest parameters claim CPU space first, the rest
  // spill to NVMe.
  std::sort(params.begin(), params.end(), [](const auto* a, const auto* b) {
    if (a->size_bytes != b->size_bytes) return a->size_bytes > b->size_bytes;
    return a->id < b->id;
  });
  std::uint64_t cpu_used = 0;
  for (const auto* t : params) {
    if (cpu_used + t->size_bytes <= machine.cpu_capacity_bytes) {
      cpu_used += t->size_bytes;
      st.param_home[t->id] = Tier::Cpu;
    } else {
      st.param_home[t->id] = Tier::Nvme;
    }
  }
  return st;
}

std::vector<TransferRequest> zero_infinity_step_begin(ZeroInfinityState& st,
                                                      const TraceStep& step) {
  std::vector<TransferRequest> out;
  if (st.fits_gpu || step.phase == Phase::OptimizerUpdate) return out;

  auto fetch_missing = [&](const TraceStep& s) {
    for (TensorId id : s.tensor_ids)
      if (!st.gpu_resident.count(id)) {
        st.gpu_resident.insert(id);
        out.push_back(fetch_request(*st.trace, id, st.param_home.at(id)));
      }
  };
  fetch_missing(step);
  std::size_t pos = st.param_step_pos.at(step.step_index);
  for (int ahead = 1; ahead <= st.lookahead_k; ++ahead) {
    if (pos + ahead >= st.param_step_order.size()) break;
    fetch_missing(st.trace->steps[st.param_step_order[pos + ahead]]);
  }
  return out;
}

std::vector<TransferRequest> zero_infinity_step_end(ZeroInfinityState& st,
                                                    const TraceStep& step) {
  std::vector<TransferRequest> out;
  if (st.fits_gpu || step.phase == Phase::OptimizerUpdate) return out;
  for (TensorId id : step.tensor_ids) {
    if (!st.gpu_resident.count(id)) continue;
    st.gpu_resident.erase(id);
    out.push_back(drop_request(*st.trace, id, st.param_home.at(id)));
  }
  return out;
}

L2LState make_l2l_state(const ExecutionTrace& trace) {
  L2LState st;
  st.trace = &trace;
  index_param_steps(trace, st.param_step_order, st.param_step_pos);
  for (const auto& t : trace.tensors)
    if (t.kind == TensorKind::ParamFP16) st.layer_tensors[t.layer].push_back(t.id);
  return st;
}

std::vector<TransferRequest> l2l_step_begin(L2LState& st, const TraceStep& step) {
  std::vector<TransferRequest> out;
  if (step.phase == Phase::OptimizerUpdate) return out;
  std::uint32_t layer = st.trace->tensor(step.tensor_ids.front()).layer;
  if (st.loaded_layer == static_cast<std::int64_t>(layer)) return out;

  for (TensorId id : st.gpu_resident) out.push_back(drop_request(*st.trace, id, Tier::Cpu));
  st.gpu_resident.clear();
  for (TensorId id : st.layer_tensors.at(layer)) {
    st.gpu_resident.insert(id);
    out.push_back(fetch_request(*st.trace, id, Tier::Cpu));
  }
  st.loaded_layer = layer;
  return out;
}

std::vector<TransferRequest> l2l_step_end(L2LState& st, const TraceStep& step) {
  std::vector<TransferRequest> out;
  if (step.phase == Phase::OptimizerUpdate) return out;

  // Offload once the layer's last consecutive step has executed.
  std::size_t pos = st.param_step_pos.at(step.step_index);
  std::uint32_t layer = st.trace->tensor(step.tensor_ids.front()).layer;
  bool last_of_run = true;
  if (pos + 1 < st.param_step_order.size()) {
    const TraceStep& next = st.trace->steps[st.param_step_order[pos + 1]];
    last_of_run = st.trace->tensor(next.tensor_ids.front()).layer != layer;
  }
  if (last_of_run) {
    for (TensorId id : st.gpu_resident) out.push_back(drop_request(*st.trace, id, Tier::Cpu));
    st.gpu_resident.clear();
    st.loaded_layer = -1;
  }
  return out;
}

std::uint64_t no_offload_check(const ExecutionTrace& trace, const MachineConfig& machine) {
  std::uint64_t model_bytes = 0;
  for (const auto& t : trace.tensors) model_bytes += t.size_bytes;
  if (model_bytes > machine.gpu_capacity_bytes)
    throw OomError("model requires " + std::to_string(model_bytes) +
                   " bytes but GPU capacity is " + std::to_string(machine.gpu_capacity_bytes));
  return model_bytes;
}

}  // namespace tencache
