#include <algorithm>

#include "engine_internal.hpp"
#include "tencache/analyzer.hpp"
#include "tencache/baselines.hpp"
#include "tencache/bufpool.hpp"
#include "tencache/engine.hpp"
#include "tencache/placement.hpp"

namespace tencache {

namespace {

std::vector<TensorDescriptor> states_in_update_order(const ExecutionTrace& trace) {
  std::vector<TensorDescriptor> states;
  for (const auto& [state_id, param_id] : trace.optimizer_pairs())
    states.push_back(trace.tensor(state_id));
  return states;
}

std::uint64_t total_bytes(const std::vector<TensorDescriptor>& tensors) {
  std::uint64_t sum = 0;
  for (const auto& t : tensors) sum += t.size_bytes;
  return sum;
}

class TenCachePolicy : public IPolicy {
 public:
  TenCachePolicy(const ExecutionTrace& trace, const MachineConfig& machine,
                 const RunConfig& config)
      : trace_(trace), machine_(machine), config_(config) {}

  InitInfo init() override {
    TensorCensus tc = tensor_census(trace_, TensorKind::ParamFP16);
    BufferPlan plan;
    if (!tc.empty()) {
      SizeDistribution tsd = size_distribution(tc);
      plan = plan_buffers(tc, tsd, machine_.gpu_capacity_bytes, machine_.cpu_capacity_bytes);
    }

    // Every step must be servable from the planned GPU buffers.
    for (const auto& step : trace_.steps) {
      if (step.phase == Phase::OptimizerUpdate) continue;
      std::map<std::uint64_t, std::uint64_t> need;
      for (TensorId id : step.tensor_ids) ++need[trace_.tensor(id).size_bytes];
      for (const auto& [size, count] : need) {
        auto it = plan.gpu_counts.find(size);
        if (it == plan.gpu_counts.end() || it->second < count)
          throw ConfigError("GPU capacity cannot hold step " + std::to_string(step.step_index) +
                            ": needs " + std::to_string(count) + " buffer(s) of " +
                            std::to_string(size) + " bytes");
      }
    }

    PrefetchTable table = build_prefetch_table(trace_);
    PlacementState params = place_parameters(table, trace_, plan);

    std::vector<TensorDescriptor> states = states_in_update_order(trace_);
    std::uint64_t cpu_remaining = machine_.cpu_capacity_bytes - plan.cpu_planned_bytes();
    std::uint64_t state_bytes = total_bytes(states);
    std::uint64_t budget = cpu_remaining;
    if (config_.policy == PolicyKind::TenCache && state_bytes > cpu_remaining) {
      // Base posture: when the states do not all fit, they live in NVMe and
      // stream synchronously through a transient buffer.
      budget = 0;
    }
    PlacementState opt = place_optimizer_states(states, budget);
    opt_sync_posture_ = budget == 0 && !states.empty();

    std::map<std::uint64_t, std::uint64_t> opt_counts;
    for (const auto& s : states)
      if (opt.location_of.at(s.id) == Tier::Cpu) ++opt_counts[s.size_bytes];

    InitInfo info;
    info.fp16_in_nvme_count = params.gpu_param_count_nvme;
    for (const auto& [id, tier] : params.location_of) {
      std::uint64_t size = trace_.tensor(id).size_bytes;
      if (tier == Tier::Gpu) info.gpu_resident_bytes += size;
      if (tier == Tier::Cpu) info.cpu_resident_bytes += size;
      if (tier == Tier::Nvme) info.nvme_resident_bytes += size;
    }
    for (const auto& [id, tier] : opt.location_of) {
      std::uint64_t size = trace_.tensor(id).size_bytes;
      if (tier == Tier::Cpu) info.cpu_resident_bytes += size;
      if (tier == Tier::Nvme) info.nvme_resident_bytes += size;
    }

    state_ = make_scheduler_state(trace_, std::move(table), std::move(params), std::move(opt),
                                  BufferPool::build(Tier::Gpu, plan.gpu_counts),
                                  BufferPool::build(Tier::Cpu, plan.cpu_counts),
                                  BufferPool::build(Tier::Cpu, opt_counts));
    return info;
  }

  std::vector<TransferRequest> on_step_begin(const TraceStep& step) override {
    return on_step_start(state_, step);
  }

  std::vector<TransferRequest> on_step_end(const TraceStep& step) override {
    if (step.phase == Phase::OptimizerUpdate) {
      auto reqs = optimizer_on_update_end(state_, step.tensor_ids.front());
      if (opt_sync_posture_)
        for (auto& r : reqs)
          if (r.kind == TransferRequest::Kind::Evict && !r.instant) r.blocking = true;
      return reqs;
    }
    if (state_.halted) return {};
    return prefetch_tensor(state_, step.tensor_ids);
  }

  std::vector<TransferRequest> on_param_restore_point() override {
    return restore_final_locations(state_, RestoreScope::Parameters);
  }

  std::vector<TransferRequest> on_iteration_end() override {
    return restore_final_locations(state_, RestoreScope::OptimizerStates);
  }

  void reset_iteration() override { tencache::reset_iteration(state_); }

  const SchedulerState& scheduler_state() const { return state_; }

 private:
  const ExecutionTrace& trace_;
  const MachineConfig& machine_;
  RunConfig config_;
  SchedulerState state_;
  bool opt_sync_posture_ = false;
};

class ZeroInfinityPolicy : public IPolicy {
 public:
  ZeroInfinityPolicy(const ExecutionTrace& trace, const MachineConfig& machine,
                     const RunConfig& config)
      : trace_(trace), machine_(machine), config_(config) {}

  InitInfo init() override {
    state_ = make_zero_infinity_state(trace_, machine_, config_.zero_lookahead_k);
    states_ = states_in_update_order(trace_);

    InitInfo info;
    if (state_.fits_gpu) {
      for (const auto& t : trace_.tensors)
        if (t.kind == TensorKind::ParamFP16) info.gpu_resident_bytes += t.size_bytes;
    } else {
      for (const auto& [id, tier] : state_.param_home) {
        std::uint64_t size = trace_.tensor(id).size_bytes;
        if (tier == Tier::Cpu) info.cpu_resident_bytes += size;
        if (tier == Tier::Nvme) {
          info.nvme_resident_bytes += size;
          ++info.fp16_in_nvme_count;
        }
      }
    }
    info.nvme_resident_bytes += total_bytes(states_);  // optimizer states all in NVMe
    return info;
  }

  std::vector<TransferRequest> on_step_begin(const TraceStep& step) override {
    if (step.phase != Phase::OptimizerUpdate) return zero_infinity_step_begin(state_, step);
    // Synchronous swap-in of the state under update.
    TensorId id = step.tensor_ids.front();
    TransferRequest req;
    req.tensor_id = id;
    req.src = Tier::Nvme;
    req.dst = Tier::Cpu;
    req.size_bytes = trace_.tensor(id).size_bytes;
    req.kind = TransferRequest::Kind::Prefetch;
    return {req};
  }

  std::vector<TransferRequest> on_step_end(const TraceStep& step) override {
    if (step.phase != Phase::OptimizerUpdate) return zero_infinity_step_end(state_, step);
    // Synchronous swap-out; the next update waits for it.
    TensorId id = step.tensor_ids.front();
    TransferRequest req;
    req.tensor_id = id;
    req.src = Tier::Cpu;
    req.dst = Tier::Nvme;
    req.size_bytes = trace_.tensor(id).size_bytes;
    req.kind = TransferRequest::Kind::Evict;
    req.blocking = true;
    return {req};
  }

  std::vector<TransferRequest> on_param_restore_point() override { return {}; }
  std::vector<TransferRequest> on_iteration_end() override { return {}; }

  void reset_iteration() override {
    state_ = make_zero_infinity_state(trace_, machine_, config_.zero_lookahead_k);
  }

 private:
  const ExecutionTrace& trace_;
  const MachineConfig& machine_;
  RunConfig config_;
  ZeroInfinityState state_;
  std::vector<TensorDescriptor> states_;
};

class L2LPolicy : public IPolicy {
 public:
  explicit L2LPolicy(const ExecutionTrace& trace) : trace_(trace) {}

  InitInfo init() override {
    state_ = make_l2l_state(trace_);
    InitInfo info;
    for (const auto& t : trace_.tensors) info.cpu_resident_bytes += t.size_bytes;
    return info;
  }

  std::vector<TransferRequest> on_step_begin(const TraceStep& step) override {
    return l2l_step_begin(state_, step);
  }
  std::vector<TransferRequest> on_step_end(const TraceStep& step) override {
    return l2l_step_end(state_, step);
  }
  std::vector<TransferRequest> on_param_restore_point() override { return {}; }
  std::vector<TransferRequest> on_iteration_end() override { return {}; }
  void reset_iteration() override { state_ = make_l2l_state(trace_); }

 private:
  const ExecutionTrace& trace_;
  L2LState state_;
};

class NoOffloadPolicy : public IPolicy {
 public:
  NoOffloadPolicy(const ExecutionTrace& trace, const MachineConfig& machine)
      : trace_(trace), machine_(machine) {}

  InitInfo init() override {
    InitInfo info;
    info.gpu_resident_bytes = no_offload_check(trace_, machine_);
    return info;
  }

  std::vector<TransferRequest> on_step_begin(const TraceStep&) override { return {}; }
  std::vector<TransferRequest> on_step_end(const TraceStep&) override { return {}; }
  std::vector<TransferRequest> on_param_restore_point() override { return {}; }
  std::vector<TransferRequest> on_iteration_end() override { return {}; }
  void reset_iteration() override {}

 private:
  const ExecutionTrace& trace_;
  const MachineConfig& machine_;
};

}  // namespace

std::unique_ptr<IPolicy> make_policy(const ExecutionTrace& trace, const MachineConfig& machine,
                                     const RunConfig& config) {
  switch (config.policy) {
    case PolicyKind::TenCache:
    case PolicyKind::TenCachePlusOpt:
      return std::make_unique<TenCachePolicy>(trace, machine, config);
    case PolicyKind::ZeroInfinityLike:
      return std::make_unique<ZeroInfinityPolicy>(trace, machine, config);
    case PolicyKind::L2LLike:
      return std::make_unique<L2LPolicy>(trace);
    case PolicyKind::NoOffload:
      return std::make_unique<NoOffloadPolicy>(trace, machine);
  }
  throw ConfigError("unknown policy");
}

namespace detail {

std::vector<TensorId> metric_tensors(const ExecutionTrace& trace, const TraceStep& step) {
  if (step.phase != Phase::OptimizerUpdate) return step.tensor_ids;
  std::vector<TensorId> out;
  for (TensorId id : step.tensor_ids)
    if (trace.tensor(id).kind == TensorKind::OptStateFP32) out.push_back(id);
  return out;
}

void validate_run_config(const RunConfig& config) {
  if (config.batch_scale <= 0) throw ConfigError("batch_scale must be positive");
  if (config.zero_lookahead_k < 0) throw ConfigError("lookahead must be non-negative");
  double prev = 0;
  for (double t : config.thresholds_us) {
    if (t <= prev) throw ConfigError("thresholds must be positive and strictly increasing");
    prev = t;
  }
}

}  // namespace detail

}  // namespace tencache
