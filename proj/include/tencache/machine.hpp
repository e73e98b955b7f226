#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tencache/rational.hpp"
#include "tencache/types.hpp"

namespace tencache {

struct LinkSpec {
  Tier src = Tier::Cpu;
  Tier dst = Tier::Gpu;
  Rat bandwidth_gbps;  // decimal GB/s (10^9 bytes)
};

enum class CpuMemoryClass : std::uint8_t { Pinned, Pageable };

struct MachineConfig {
  std::uint64_t gpu_capacity_bytes = 0;
  std::uint64_t cpu_capacity_bytes = 0;
  std::vector<LinkSpec> links;  // cpu->gpu, gpu->cpu, cpu->nvme (write), nvme->cpu (read)
  CpuMemoryClass cpu_memory_class = CpuMemoryClass::Pinned;
  std::vector<LinkSpec> pinned_overrides;  // applied to CPU-touching links when pinned

  // Bandwidth after applying the pinned override, in GB/s. Throws ConfigError
  // for a link that is not configured.
  Rat effective_bandwidth(Tier src, Tier dst) const;
};

// Measured defaults: pageable-class link bandwidths with pinned overrides for
// the CPU<->GPU pair, 48 GB GPU and 256 GB CPU.
MachineConfig default_machine();

// JSON config; any missing key falls back to default_machine().
MachineConfig load_machine(const std::string& path);

// Microseconds to move size_bytes over the (src,dst) link. The nvme->gpu
// composite is the sum of its nvme->cpu and cpu->gpu legs.
Rat transfer_time_us(const MachineConfig& cfg, Tier src, Tier dst, std::uint64_t size_bytes);

}  // namespace tencache
