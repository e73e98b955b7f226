#include "tencache/placement.hpp"

namespace tencache {

PlacementState place_parameters(PrefetchTable& table, const ExecutionTrace& trace,
                                const BufferPlan& plan) {
  PlacementState state;
  auto gpu_left = plan.gpu_counts;
  auto cpu_left = plan.cpu_counts;

  for (const PrefetchRow& row : table.rows) {
    if (state.location_of.count(row.tensor_id)) continue;  // first access decides
    std::uint64_t size = trace.tensor(row.tensor_id).size_bytes;
    Tier tier = Tier::Nvme;
    if (auto it = gpu_left.find(size); it != gpu_left.end() && it->second > 0) {
      --it->second;
      tier = Tier::Gpu;
    } else if (auto jt = cpu_left.find(size); jt != cpu_left.end() && jt->second > 0) {
      --jt->second;
      tier = Tier::Cpu;
    }
    state.location_of[row.tensor_id] = tier;
    if (tier == Tier::Gpu) state.active_window.push_back(row.tensor_id);
    if (tier == Tier::Nvme) {
      state.nvme_copy.insert(row.tensor_id);
      ++state.gpu_param_count_nvme;
    }
  }

  for (PrefetchRow& row : table.rows) {
    Tier tier = state.location_of.at(row.tensor_id);
    row.final_loc = tier;
    row.current_loc = tier;
  }
  return state;
}

PlacementState place_optimizer_states(const std::vector<TensorDescriptor>& states,
                                      std::uint64_t cpu_budget_bytes) {
  PlacementState state;
  std::uint64_t used = 0;
  bool exhausted = false;
  for (const TensorDescriptor& s : states) {
    if (!exhausted && used + s.size_bytes <= cpu_budget_bytes) {
      used += s.size_bytes;
      state.location_of[s.id] = Tier::Cpu;
    } else {
      exhausted = true;
      state.location_of[s.id] = Tier::Nvme;
      state.nvme_copy.insert(s.id);
    }
  }
  return state;
}

void dump_placement_csv(const PlacementState& placement, const ExecutionTrace& trace,
                        std::ostream& out) {
  out << "tensor_id,size,final_loc\n";
  for (const auto& [id, tier] : placement.location_of)
    out << id << "," << trace.tensor(id).size_bytes << "," << to_string(tier) << "\n";
}

}  // namespace tencache
