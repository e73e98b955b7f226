#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <set>
#include <vector>

#include "tencache/analyzer.hpp"
#include "tencache/bufpool.hpp"
#include "tencache/trace.hpp"
#include "tencache/types.hpp"

namespace tencache {

struct PlacementState {
  std::map<TensorId, Tier> location_of;   // final tier per tensor
  std::set<TensorId> nvme_copy;           // tensors with a persistent NVMe replica
  std::vector<TensorId> active_window;    // GPU residents in first-access order
  std::uint64_t gpu_param_count_nvme = 0; // FP16 parameters assigned to NVMe
};

// Walk the prefetch table in order of first access, assigning GPU while a
// buffer of the tensor's size class remains in the plan, then CPU, then NVMe.
// Writes final/current locations back into the table rows.
PlacementState place_parameters(PrefetchTable& table, const ExecutionTrace& trace,
                                const BufferPlan& plan);

// Optimizer states take CPU slots in update order until the byte budget is
// exhausted; everything from the first state that does not fit goes to NVMe.
PlacementState place_optimizer_states(const std::vector<TensorDescriptor>& states,
                                      std::uint64_t cpu_budget_bytes);

void dump_placement_csv(const PlacementState& placement, const ExecutionTrace& trace,
                        std::ostream& out);

}  // namespace tencache
