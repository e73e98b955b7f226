#include "tencache/analyzer.hpp"

#include <stdexcept>

namespace tencache {

PrefetchTable build_prefetch_table(const ExecutionTrace& trace) {
  PrefetchTable table;
  Rat clock(0);
  for (const auto& step : trace.steps) {
    if (step.phase == Phase::Forward || step.phase == Phase::Backward) {
      for (TensorId id : step.tensor_ids) {
        PrefetchRow row;
        row.order = static_cast<std::uint32_t>(table.rows.size());
        row.tensor_id = id;
        row.activation_us = clock;
        table.rows.push_back(row);
      }
    }
    clock += rat_from_double(step.compute_us);
  }
  return table;
}

SizeDistribution size_distribution(const TensorCensus& tc) {
  if (tc.empty()) throw std::invalid_argument("size_distribution: empty census");
  SizeDistribution dist;
  std::map<std::uint64_t, Rat> weighted;
  for (const auto& [size, count] : tc) {
    std::uint64_t sc = size * count;
    weighted[size] = rat_of(sc);
    dist.total_size += sc;
  }
  for (auto& [size, w] : weighted) dist.ratios[size] = w / rat_of(dist.total_size);
  return dist;
}

Rat profile_overhead(const ExecutionTrace& trace) {
  Rat total(0);
  for (const auto& step : trace.steps) total += rat_from_double(step.compute_us);
  return total;
}

void dump_prefetch_table_csv(const PrefetchTable& table, std::ostream& out) {
  out << "order,tensor_id,activation_us,current_loc,final_loc\n";
  for (const auto& row : table.rows) {
    out << row.order << "," << row.tensor_id << "," << to_double(row.activation_us) << ","
        << to_string(row.current_loc) << "," << to_string(row.final_loc) << "\n";
  }
}

}  // namespace tencache
