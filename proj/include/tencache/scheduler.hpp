#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "tencache/analyzer.hpp"
#include "tencache/bufpool.hpp"
#include "tencache/placement.hpp"
#include "tencache/trace.hpp"
#include "tencache/types.hpp"

namespace tencache {

enum class SchedulerMode : std::uint8_t { CpuGpu, CpuGpuNvme };

struct TransferRequest {
  enum class Kind : std::uint8_t { Prefetch, Evict, Restore };

  TensorId tensor_id = 0;
  Tier src = Tier::Cpu;
  Tier dst = Tier::Gpu;
  std::uint64_t size_bytes = 0;
  Kind kind = Kind::Prefetch;
  bool via_cpu_staging = false;  // nvme->gpu only: nvme->cpu staging leg, then cpu->gpu
  bool instant = false;          // bookkeeping move, occupies no link time
  bool src_retains = false;      // source tier keeps a copy (no occupancy loss)
  bool dst_has_copy = false;     // destination already holds the bytes
  bool blocking = false;         // subsequent step may not start before completion
};

// Mutable run state of the prefetch-eviction engine. One simulation run owns
// it exclusively.
struct SchedulerState {
  SchedulerMode mode = SchedulerMode::CpuGpu;
  PrefetchTable table;
  PlacementState placement;                // final parameter locations
  PlacementState opt_placement;            // final optimizer-state locations
  std::map<TensorId, Tier> current_loc;    // parameters and optimizer states
  std::set<TensorId> active_window;
  std::set<TensorId> nvme_copy;
  bool halted = false;

  BufferPool gpu_pool;
  BufferPool cpu_pool;      // parameter cache
  BufferPool cpu_opt_pool;  // optimizer-state cache

  // Derived, immutable over the run.
  const ExecutionTrace* trace = nullptr;
  std::map<TensorId, std::vector<std::uint32_t>> access_rows;  // ascending row indexes
  std::vector<std::size_t> step_row_end;                       // per step index
  std::vector<TensorId> opt_update_order;                      // state ids

  // Iteration-local progress.
  std::size_t exec_row = 0;  // rows consumed by actual execution
  std::deque<TensorId> opt_pending;  // NVMe states not yet prefetched, update order
  std::set<TensorId> opt_transient;  // states updated outside the pool this iteration

  // Snapshots for the iteration reset.
  BufferPool initial_gpu_pool, initial_cpu_pool, initial_cpu_opt_pool;
  std::set<TensorId> initial_nvme_copy;

  std::uint64_t tensor_size(TensorId id) const;
  Tier final_loc(TensorId id) const;
  // First access row at or after the execution frontier; nullopt when the
  // tensor is done for the iteration.
  std::optional<std::uint32_t> next_use_row(TensorId id) const;
};

SchedulerState make_scheduler_state(const ExecutionTrace& trace, PrefetchTable table,
                                    PlacementState params, PlacementState opt_states,
                                    BufferPool gpu_pool, BufferPool cpu_pool,
                                    BufferPool cpu_opt_pool);

// Consumes the step's prefetch-table rows and issues demand fetches for any
// accessed parameter that is not GPU-resident (including the buffer eviction
// that makes room). Optimizer steps demand their state into CPU.
std::vector<TransferRequest> on_step_start(SchedulerState& state, const TraceStep& step);

// PrefetchTensor: per completed tensor, evict it and stage the next
// not-yet-resident tensor from the prefetch table. No-op at table end and
// when the next needed tensor is the completing tensor itself (halt rule).
std::vector<TransferRequest> prefetch_tensor(SchedulerState& state,
                                             const std::vector<TensorId>& evicted_tensor_list);

// EvictTensor: release the GPU buffer; NVMe-final tensors are a free release,
// others move to a CPU buffer, swapping a same-size CPU occupant to NVMe when
// the class is full (GPU-designated occupants first).
std::vector<TransferRequest> evict_tensor(SchedulerState& state, TensorId evict_tensor_id);

// True iff every remaining prefetch-table row's tensor is already resident.
bool halt_check(const SchedulerState& state);

// Actions taken when one state's update completes: evict it to make room and
// asynchronously prefetch the earliest pending NVMe state of the freed class.
std::vector<TransferRequest> optimizer_on_update_end(SchedulerState& state, TensorId state_id);

// Whole optimizer phase on a scratch copy of the state, flattened in update
// order. Mirrors replaying optimizer_on_update_end per update.
std::vector<TransferRequest> optimizer_step_schedule(const SchedulerState& state);

// Transfers that return every out-of-place tensor to its final location.
enum class RestoreScope : std::uint8_t { Parameters, OptimizerStates, All };
std::vector<TransferRequest> restore_final_locations(SchedulerState& state,
                                                     RestoreScope scope = RestoreScope::All);

// Pools, window, cursor and NVMe-copy set back to their post-placement state.
void reset_iteration(SchedulerState& state);

}  // namespace tencache
