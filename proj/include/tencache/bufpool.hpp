#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "tencache/analyzer.hpp"
#include "tencache/trace.hpp"
#include "tencache/types.hpp"

namespace tencache {

class PoolError : public std::runtime_error {
 public:
  explicit PoolError(const std::string& what) : std::runtime_error(what) {}
};

struct BufferPlan {
  std::map<std::uint64_t, std::uint64_t> gpu_counts;
  std::map<std::uint64_t, std::uint64_t> cpu_counts;
  std::uint64_t gpu_avail_bytes = 0;
  std::uint64_t cpu_avail_bytes = 0;

  std::uint64_t gpu_planned_bytes() const;
  std::uint64_t cpu_planned_bytes() const;
};

// Buffer counts per size class from the size distribution and the available
// bytes per tier. Counts are floored so planned bytes never exceed capacity
// and never exceed the census count per class.
BufferPlan plan_buffers(const TensorCensus& tc, const SizeDistribution& tsd,
                        std::uint64_t gpu_avail, std::uint64_t cpu_avail);

enum class ChunkState : std::uint8_t { Free, Occupied };

struct Chunk {
  std::uint32_t buffer_id = 0;
  std::uint64_t offset = 0;
  std::uint64_t size = 0;
  ChunkState state = ChunkState::Free;
  std::optional<TensorId> occupant;
  bool gpu_designated = false;
};

// Fixed-partition pool carved from one contiguous modeled region. Chunks are
// laid out in ascending size class, then index order; each size class has a
// FIFO free list.
class BufferPool {
 public:
  BufferPool() = default;

  static BufferPool build(Tier tier, const std::map<std::uint64_t, std::uint64_t>& counts);

  // FIFO pop; nullopt when the class is exhausted. Throws UnknownSizeClass
  // (PoolError) when the class does not exist at all.
  std::optional<std::uint32_t> acquire(std::uint64_t size, TensorId tensor);

  // Throws PoolError on double release.
  void release(std::uint32_t buffer_id);

  void set_designated(std::uint32_t buffer_id, bool designated);

  // Lowest-offset occupied chunk of the class; designated-only when preferred.
  std::optional<std::pair<std::uint32_t, TensorId>> find_victim(std::uint64_t size,
                                                                bool prefer_gpu_designated) const;

  // All occupied chunks of the class in offset order.
  std::vector<std::pair<std::uint32_t, TensorId>> occupants(std::uint64_t size,
                                                            bool designated_only) const;

  bool has_class(std::uint64_t size) const { return free_lists_.count(size) != 0; }
  std::size_t free_count(std::uint64_t size) const;
  std::optional<std::uint32_t> buffer_of(TensorId tensor) const;

  Tier tier() const { return tier_; }
  std::uint64_t region_bytes() const { return region_bytes_; }
  std::uint64_t occupied_bytes() const { return occupied_bytes_; }
  const std::vector<Chunk>& chunks() const { return chunks_; }
  const Chunk& chunk(std::uint32_t buffer_id) const { return chunks_.at(buffer_id); }

  void dump_csv(std::ostream& out) const;

 private:
  Tier tier_ = Tier::Gpu;
  std::uint64_t region_bytes_ = 0;
  std::uint64_t occupied_bytes_ = 0;
  std::vector<Chunk> chunks_;  // indexed by buffer_id
  std::map<std::uint64_t, std::deque<std::uint32_t>> free_lists_;
  std::unordered_map<TensorId, std::uint32_t> occupant_index_;
};

}  // namespace tencache
