#include "tencache/bufpool.hpp"

#include <boost/multiprecision/cpp_int.hpp>

namespace tencache {

std::uint64_t BufferPlan::gpu_planned_bytes() const {
  std::uint64_t total = 0;
  for (const auto& [size, count] : gpu_counts) total += size * count;
  return total;
}

std::uint64_t BufferPlan::cpu_planned_bytes() const {
  std::uint64_t total = 0;
  for (const auto& [size, count] : cpu_counts) total += size * count;
  return total;
}

namespace {

// floor(tsd[s] * avail / s), capped at cap.
std::uint64_t buffer_count(const Rat& ratio, std::uint64_t avail, std::uint64_t size,
                           std::uint64_t cap) {
  Rat exact = ratio * rat_of(avail) / rat_of(size);
  BigInt floored = exact.numerator() / exact.denominator();
  std::uint64_t count = floored.convert_to<std::uint64_t>();
  return std::min(count, cap);
}

}  // namespace

BufferPlan plan_buffers(const TensorCensus& tc, const SizeDistribution& tsd,
                        std::uint64_t gpu_avail, std::uint64_t cpu_avail) {
  BufferPlan plan;
  plan.gpu_avail_bytes = gpu_avail;
  plan.cpu_avail_bytes = cpu_avail;
  for (const auto& [size, count] : tc) {
    const Rat& ratio = tsd.ratios.at(size);
    std::uint64_t gpu = buffer_count(ratio, gpu_avail, size, count);
    std::uint64_t cpu = buffer_count(ratio, cpu_avail, size, count - gpu);
    plan.gpu_counts[size] = gpu;
    plan.cpu_counts[size] = cpu;
  }
  return plan;
}

BufferPool BufferPool::build(Tier tier, const std::map<std::uint64_t, std::uint64_t>& counts) {
  BufferPool pool;
  pool.tier_ = tier;
  std::uint64_t offset = 0;
  std::uint32_t next_id = 0;
  for (const auto& [size, count] : counts) {  // ascending size class
    for (std::uint64_t i = 0; i < count; ++i) {
      Chunk c;
      c.buffer_id = next_id++;
      c.offset = offset;
      c.size = size;
      offset += size;
      pool.free_lists_[size].push_back(c.buffer_id);
      pool.chunks_.push_back(c);
    }
    pool.free_lists_.try_emplace(size);
  }
  pool.region_bytes_ = offset;
  return pool;
}

std::optional<std::uint32_t> BufferPool::acquire(std::uint64_t size, TensorId tensor) {
  auto it = free_lists_.find(size);
  if (it == free_lists_.end())
    throw PoolError("UnknownSizeClass: no class of size " + std::to_string(size) + " in " +
                    to_string(tier_) + " pool");
  if (it->second.empty()) return std::nullopt;
  std::uint32_t id = it->second.front();
  it->second.pop_front();
  Chunk& c = chunks_[id];
  c.state = ChunkState::Occupied;
  c.occupant = tensor;
  occupied_bytes_ += c.size;
  occupant_index_[tensor] = id;
  return id;
}

void BufferPool::release(std::uint32_t buffer_id) {
  if (buffer_id >= chunks_.size()) throw PoolError("release: unknown buffer id");
  Chunk& c = chunks_[buffer_id];
  if (c.state == ChunkState::Free)
    throw PoolError("DoubleRelease: buffer " + std::to_string(buffer_id) + " already free");
  occupant_index_.erase(*c.occupant);
  occupied_bytes_ -= c.size;
  c.state = ChunkState::Free;
  c.occupant.reset();
  c.gpu_designated = false;
  free_lists_[c.size].push_back(buffer_id);
}

void BufferPool::set_designated(std::uint32_t buffer_id, bool designated) {
  Chunk& c = chunks_.at(buffer_id);
  if (designated && (c.state != ChunkState::Occupied || tier_ != Tier::Cpu))
    throw PoolError("gpu_designated is only valid on occupied CPU chunks");
  c.gpu_designated = designated;
}

std::optional<std::pair<std::uint32_t, TensorId>> BufferPool::find_victim(
    std::uint64_t size, bool prefer_gpu_designated) const {
  for (const Chunk& c : chunks_) {  // buffer ids follow offset order
    if (c.size != size || c.state != ChunkState::Occupied) continue;
    if (prefer_gpu_designated && !c.gpu_designated) continue;
    return std::make_pair(c.buffer_id, *c.occupant);
  }
  return std::nullopt;
}

std::vector<std::pair<std::uint32_t, TensorId>> BufferPool::occupants(std::uint64_t size,
                                                                      bool designated_only) const {
  std::vector<std::pair<std::uint32_t, TensorId>> result;
  for (const Chunk& c : chunks_) {
    if (c.size != size || c.state != ChunkState::Occupied) continue;
    if (designated_only && !c.gpu_designated) continue;
    result.emplace_back(c.buffer_id, *c.occupant);
  }
  return result;
}

std::size_t BufferPool::free_count(std::uint64_t size) const {
  auto it = free_lists_.find(size);
  return it == free_lists_.end() ? 0 : it->second.size();
}

std::optional<std::uint32_t> BufferPool::buffer_of(TensorId tensor) const {
  auto it = occupant_index_.find(tensor);
  if (it == occupant_index_.end()) return std::nullopt;
  return it->second;
}

void BufferPool::dump_csv(std::ostream& out) const {
  out << "id,offset,size,state,occupant,designated\n";
  for (const Chunk& c : chunks_) {
    out << c.buffer_id << "," << c.offset << "," << c.size << ","
        << (c.state == ChunkState::Free ? "free" : "occupied") << ",";
    if (c.occupant) out << *c.occupant;
    out << "," << (c.gpu_designated ? 1 : 0) << "\n";
  }
}

}  // namespace tencache
