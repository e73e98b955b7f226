#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tencache/types.hpp"

namespace tencache {

enum class TensorKind : std::uint8_t { ParamFP16, OptStateFP32 };
enum class Phase : std::uint8_t { Forward, Backward, OptimizerUpdate };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::Forward: return "f";
    case Phase::Backward: return "b";
    case Phase::OptimizerUpdate: return "o";
  }
  return "?";
}

struct TensorDescriptor {
  TensorId id = 0;
  std::uint64_t size_bytes = 0;
  TensorKind kind = TensorKind::ParamFP16;
  std::uint32_t layer = 0;

  friend bool operator==(const TensorDescriptor&, const TensorDescriptor&) = default;
};

struct TraceStep {
  std::uint32_t step_index = 0;
  Phase phase = Phase::Forward;
  std::vector<TensorId> tensor_ids;  // accessed in order, non-empty
  double compute_us = 0.0;

  friend bool operator==(const TraceStep&, const TraceStep&) = default;
};

// One training iteration's step sequence plus the tensors it touches.
// Immutable after load/synthesis; `iterations` replays the same sequence.
struct ExecutionTrace {
  std::vector<TensorDescriptor> tensors;
  std::vector<TraceStep> steps;
  std::uint32_t iterations = 1;

  friend bool operator==(const ExecutionTrace&, const ExecutionTrace&) = default;

  bool has_tensor(TensorId id) const;
  const TensorDescriptor& tensor(TensorId id) const;
  // State id paired with a parameter through an optimizer step, if any.
  std::vector<std::pair<TensorId, TensorId>> optimizer_pairs() const;  // (state, param)
};

class TraceError : public std::runtime_error {
 public:
  explicit TraceError(const std::string& what) : std::runtime_error(what) {}
};

// Distinct-tensor size census: size_bytes -> count.
using TensorCensus = std::map<std::uint64_t, std::uint64_t>;

// Candidate tensor sizes for synthesis; layer sizes are drawn from this set.
struct SizeProfile {
  std::vector<std::uint64_t> choices;
};

inline constexpr double kDefaultComputeUsPerByte = 2.8e-5;
inline constexpr double kDefaultOptUsPerByte = 1.6e-6;
// FP32 master copy + momentum + variance (12N) against 2N of FP16 params.
inline constexpr std::uint64_t kOptStateBytesPerParamByte = 6;

ExecutionTrace load_trace(const std::string& path);
void save_trace(const ExecutionTrace& trace, const std::string& path);

// Throws TraceError naming the offending step/tensor on any invariant breach.
void validate_trace(const ExecutionTrace& trace);

// Deterministic transformer-like trace: forward covers layers 1..L in order,
// backward the exact reverse, one optimizer update per parameter.
ExecutionTrace synthesize_transformer_trace(std::uint32_t layers, std::uint32_t tensors_per_layer,
                                            const SizeProfile& profile, double compute_us_per_byte,
                                            std::uint64_t seed, std::uint32_t iterations = 1,
                                            double opt_us_per_byte = kDefaultOptUsPerByte,
                                            bool optimizer_steps = true);

TensorCensus tensor_census(const ExecutionTrace& trace, TensorKind kind);

}  // namespace tencache
