#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <vector>

#include "tencache/rational.hpp"
#include "tencache/trace.hpp"
#include "tencache/types.hpp"

namespace tencache {

// One parameter access observed during the dry run.
struct PrefetchRow {
  std::uint32_t order = 0;
  TensorId tensor_id = 0;
  Rat activation_us;  // cumulative compute time at the access step's start
  Tier current_loc = Tier::Cpu;
  Tier final_loc = Tier::Cpu;
};

struct PrefetchTable {
  std::vector<PrefetchRow> rows;
  std::size_t cursor = 0;  // next row not yet covered by execution or prefetch
};

struct SizeDistribution {
  std::map<std::uint64_t, Rat> ratios;  // size -> size*count / total_size, exact
  std::uint64_t total_size = 0;

  double ratio_as_double(std::uint64_t size) const { return to_double(ratios.at(size)); }
};

// One row per ParamFP16 access of the forward+backward passes, in execution
// order. Locations start at CPU; the placement step rewrites them.
PrefetchTable build_prefetch_table(const ExecutionTrace& trace);

// Memory-requirement ratio per tensor size relative to the total requirement.
SizeDistribution size_distribution(const TensorCensus& tc);

// Simulated cost of the profiling dry run: one pass over the iteration's steps.
Rat profile_overhead(const ExecutionTrace& trace);

void dump_prefetch_table_csv(const PrefetchTable& table, std::ostream& out);

}  // namespace tencache
