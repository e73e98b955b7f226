#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace tencache {

using TensorId = std::uint32_t;

// Memory tiers of the modeled hierarchy, fastest first.
enum class Tier : std::uint8_t { Gpu, Cpu, Nvme };

inline const char* to_string(Tier t) {
  switch (t) {
    case Tier::Gpu: return "gpu";
    case Tier::Cpu: return "cpu";
    case Tier::Nvme: return "nvme";
  }
  return "?";
}

inline Tier tier_from_string(const std::string& s) {
  if (s == "gpu") return Tier::Gpu;
  if (s == "cpu") return Tier::Cpu;
  if (s == "nvme") return Tier::Nvme;
  throw std::invalid_argument("unknown tier: " + s);
}

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class OomError : public std::runtime_error {
 public:
  explicit OomError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace tencache
