#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "tencache/baselines.hpp"
#include "tencache/machine.hpp"
#include "tencache/rational.hpp"
#include "tencache/scheduler.hpp"
#include "tencache/trace.hpp"

namespace tencache {

struct RunConfig {
  PolicyKind policy = PolicyKind::TenCache;
  std::vector<double> thresholds_us{10.0, 30.0, 100.0};  // positive, sorted
  bool restore_overlap = true;
  double batch_scale = 1.0;
  int zero_lookahead_k = 1;
  std::uint64_t seed = 0;          // echoed into reports; the engine draws no entropy
  std::ostream* event_log = nullptr;  // optional line-delimited JSON sink
};

struct SimReport {
  Rat total_time_us{0};
  std::vector<Rat> per_iteration_us;
  Rat hit_rate{0};
  std::uint64_t param_accesses = 0;
  std::uint64_t param_hits = 0;
  std::vector<Rat> param_wait_us;
  std::vector<std::pair<double, Rat>> pct_wait_below;  // threshold -> percent in [0,100]
  Rat optimizer_miss_rate{0};
  std::uint64_t opt_accesses = 0;
  std::uint64_t opt_misses = 0;
  Rat gpu_utilization_timeavg{0};
  Rat cpu_utilization_timeavg{0};
  std::uint64_t fp16_in_nvme_count = 0;
  std::map<std::string, std::uint64_t> transfer_bytes;  // per directed link
  Rat profile_overhead_us{0};

  friend bool operator==(const SimReport&, const SimReport&) = default;
};

// Per-policy glue between the trace replay and the transfer decisions. All
// policy state mutates at request-issue time, so the request sequence is
// independent of the timing machinery that executes it.
class IPolicy {
 public:
  struct InitInfo {
    std::uint64_t gpu_resident_bytes = 0;
    std::uint64_t cpu_resident_bytes = 0;
    std::uint64_t nvme_resident_bytes = 0;
    std::uint64_t fp16_in_nvme_count = 0;
  };

  virtual ~IPolicy() = default;
  virtual InitInfo init() = 0;
  virtual std::vector<TransferRequest> on_step_begin(const TraceStep& step) = 0;
  virtual std::vector<TransferRequest> on_step_end(const TraceStep& step) = 0;
  // Parameter restores; the engine calls this at the optimizer-phase start
  // when restore_overlap is set, otherwise at the iteration end.
  virtual std::vector<TransferRequest> on_param_restore_point() = 0;
  // Remaining restores at the iteration boundary (optimizer states).
  virtual std::vector<TransferRequest> on_iteration_end() = 0;
  virtual void reset_iteration() = 0;
};

std::unique_ptr<IPolicy> make_policy(const ExecutionTrace& trace, const MachineConfig& machine,
                                     const RunConfig& config);

// Deterministic discrete-event run. Throws ConfigError before event zero for
// inconsistent setups and OomError for NoOffload on an oversized model.
SimReport run(const ExecutionTrace& trace, const MachineConfig& machine, const RunConfig& config);

// Brute-force oracle with the same contract, restricted to small traces.
inline constexpr std::size_t kReferenceTensorGuard = 64;
SimReport run_reference(const ExecutionTrace& trace, const MachineConfig& machine,
                        const RunConfig& config);

enum class SweepAxis : std::uint8_t { BatchScale, GpuCapacity, CpuCapacity, Pinned };

SweepAxis sweep_axis_from_string(const std::string& name);
const char* to_string(SweepAxis axis);

std::vector<SimReport> sweep(const ExecutionTrace& trace, const MachineConfig& machine,
                             const RunConfig& config, SweepAxis axis,
                             const std::vector<double>& values, unsigned threads = 1);

}  // namespace tencache
