#include "tencache/machine.hpp"

#include <fstream>

#include <json.hpp>

namespace tencache {

using nlohmann::json;

Rat MachineConfig::effective_bandwidth(Tier src, Tier dst) const {
  const LinkSpec* base = nullptr;
  for (const auto& l : links)
    if (l.src == src && l.dst == dst) base = &l;
  if (!base)
    throw ConfigError(std::string("unknown link ") + to_string(src) + "->" + to_string(dst));
  if (cpu_memory_class == CpuMemoryClass::Pinned && (src == Tier::Cpu || dst == Tier::Cpu)) {
    for (const auto& l : pinned_overrides)
      if (l.src == src && l.dst == dst) return l.bandwidth_gbps;
  }
  return base->bandwidth_gbps;
}

MachineConfig default_machine() {
  MachineConfig cfg;
  cfg.gpu_capacity_bytes = 48ULL * 1000 * 1000 * 1000;
  cfg.cpu_capacity_bytes = 256ULL * 1000 * 1000 * 1000;
  cfg.links = {
      {Tier::Cpu, Tier::Gpu, rat_decimal(1036, -2)},
      {Tier::Gpu, Tier::Cpu, rat_decimal(951, -2)},
      {Tier::Cpu, Tier::Nvme, rat_decimal(73, -2)},
      {Tier::Nvme, Tier::Cpu, rat_decimal(236, -2)},
  };
  cfg.cpu_memory_class = CpuMemoryClass::Pinned;
  cfg.pinned_overrides = {
      {Tier::Cpu, Tier::Gpu, rat_decimal(2474, -2)},
      {Tier::Gpu, Tier::Cpu, rat_decimal(2591, -2)},
  };
  return cfg;
}

namespace {

std::vector<LinkSpec> parse_links(const json& arr) {
  std::vector<LinkSpec> links;
  for (const auto& l : arr) {
    LinkSpec spec;
    spec.src = tier_from_string(l.at("src").get<std::string>());
    spec.dst = tier_from_string(l.at("dst").get<std::string>());
    spec.bandwidth_gbps = rat_from_double(l.at("gbps").get<double>());
    if (spec.bandwidth_gbps <= Rat(0)) throw ConfigError("link bandwidth must be positive");
    links.push_back(spec);
  }
  return links;
}

}  // namespace

MachineConfig load_machine(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open machine config: " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("machine config " + path + ": " + e.what());
  }

  MachineConfig cfg = default_machine();
  if (doc.contains("gpu_capacity_bytes"))
    cfg.gpu_capacity_bytes = doc.at("gpu_capacity_bytes").get<std::uint64_t>();
  if (doc.contains("cpu_capacity_bytes"))
    cfg.cpu_capacity_bytes = doc.at("cpu_capacity_bytes").get<std::uint64_t>();
  if (doc.contains("links")) {
    // Replace matching defaults, keep the rest.
    for (const auto& l : parse_links(doc.at("links"))) {
      bool replaced = false;
      for (auto& base : cfg.links)
        if (base.src == l.src && base.dst == l.dst) {
          base = l;
          replaced = true;
        }
      if (!replaced) cfg.links.push_back(l);
    }
  }
  if (doc.contains("cpu_memory_class")) {
    std::string cls = doc.at("cpu_memory_class").get<std::string>();
    if (cls == "pinned")
      cfg.cpu_memory_class = CpuMemoryClass::Pinned;
    else if (cls == "pageable")
      cfg.cpu_memory_class = CpuMemoryClass::Pageable;
    else
      throw ConfigError("cpu_memory_class must be 'pinned' or 'pageable'");
  }
  if (doc.contains("pinned_overrides")) cfg.pinned_overrides = parse_links(doc.at("pinned_overrides"));
  if (cfg.gpu_capacity_bytes == 0 || cfg.cpu_capacity_bytes == 0)
    throw ConfigError("capacities must be positive");
  return cfg;
}

Rat transfer_time_us(const MachineConfig& cfg, Tier src, Tier dst, std::uint64_t size_bytes) {
  if (src == dst) throw ConfigError("transfer src == dst");
  if (size_bytes == 0) return Rat(0);
  if (src == Tier::Nvme && dst == Tier::Gpu) {
    return transfer_time_us(cfg, Tier::Nvme, Tier::Cpu, size_bytes) +
           transfer_time_us(cfg, Tier::Cpu, Tier::Gpu, size_bytes);
  }
  // 1 GB/s == 1000 bytes per microsecond.
  Rat bytes_per_us = cfg.effective_bandwidth(src, dst) * Rat(1000);
  return rat_of(size_bytes) / bytes_per_us;
}

}  // namespace tencache
