#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tencache/machine.hpp"
#include "tencache/scheduler.hpp"
#include "tencache/trace.hpp"

namespace tencache {

enum class PolicyKind : std::uint8_t {
  TenCache,
  TenCachePlusOpt,
  ZeroInfinityLike,
  L2LLike,
  NoOffload,
};

PolicyKind policy_from_string(const std::string& name);
const char* to_string(PolicyKind kind);

// Idealized competitor models. They reproduce the baselines' documented
// placement and movement behavior, not their implementations.

// ZeRO-Infinity-like: parameters fully offloaded (largest to CPU first, the
// overflow to NVMe), fetched on demand with a fixed lookahead and dropped
// after each step; optimizer states all in NVMe with synchronous swap-in and
// swap-out per state. When the whole model fits GPU memory it degenerates to
// NoOffload for the forward and backward passes.
struct ZeroInfinityState {
  const ExecutionTrace* trace = nullptr;
  int lookahead_k = 1;
  bool fits_gpu = false;
  std::map<TensorId, Tier> param_home;  // cpu or nvme
  std::set<TensorId> gpu_resident;      // ephemeral copies
  std::vector<std::size_t> param_step_order;  // indexes of fwd/bwd steps
  std::map<std::size_t, std::size_t> param_step_pos;
};

ZeroInfinityState make_zero_infinity_state(const ExecutionTrace& trace,
                                           const MachineConfig& machine, int lookahead_k);
std::vector<TransferRequest> zero_infinity_step_begin(ZeroInfinityState& st,
                                                      const TraceStep& step);
std::vector<TransferRequest> zero_infinity_step_end(ZeroInfinityState& st, const TraceStep& step);

// L2L-like: CPU holds every parameter; exactly one layer's tensors live in
// GPU at a time, loaded before the layer runs and dropped after it finishes.
struct L2LState {
  const ExecutionTrace* trace = nullptr;
  std::map<std::uint32_t, std::vector<TensorId>> layer_tensors;
  std::set<TensorId> gpu_resident;
  std::int64_t loaded_layer = -1;
  std::vector<std::size_t> param_step_order;
  std::map<std::size_t, std::size_t> param_step_pos;
};

L2LState make_l2l_state(const ExecutionTrace& trace);
std::vector<TransferRequest> l2l_step_begin(L2LState& st, const TraceStep& step);
std::vector<TransferRequest> l2l_step_end(L2LState& st, const TraceStep& step);

// NoOffload: the whole model must fit GPU memory; throws OomError otherwise.
// Returns total model bytes.
std::uint64_t no_offload_check(const ExecutionTrace& trace, const MachineConfig& machine);

}  // namespace tencache
