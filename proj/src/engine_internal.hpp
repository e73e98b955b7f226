#pragma once

// Accounting shared by the event engine and the reference interpreter. The
// timing machinery that feeds it is implemented independently on each side.

#include <array>
#include <map>
#include <ostream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "tencache/engine.hpp"
#include "tencache/machine.hpp"
#include "tencache/scheduler.hpp"
#include "tencache/trace.hpp"

namespace tencache::detail {

inline const char* kind_tag(TransferRequest::Kind k) {
  switch (k) {
    case TransferRequest::Kind::Prefetch: return "prefetch";
    case TransferRequest::Kind::Evict: return "evict";
    case TransferRequest::Kind::Restore: return "restore";
  }
  return "?";
}

inline std::string link_name(Tier src, Tier dst) {
  return std::string(to_string(src)) + "->" + to_string(dst);
}

struct EventLogger {
  std::ostream* out = nullptr;

  void log(const Rat& now, const char* kind, TensorId tensor, Tier src, Tier dst) const {
    if (!out) return;
    nlohmann::json j = {{"us", to_double(now)},
                        {"kind", kind},
                        {"tensor", tensor},
                        {"src", to_string(src)},
                        {"dst", to_string(dst)}};
    *out << j.dump() << "\n";
  }
};

// Piecewise-constant occupancy integral per tier.
struct TierOccupancy {
  std::int64_t bytes = 0;
  Rat integral{0};
  Rat last_change{0};

  void change(std::int64_t delta, const Rat& now) {
    integral += Rat(BigInt(bytes)) * (now - last_change);
    last_change = now;
    bytes += delta;
  }
  void set(std::int64_t value, const Rat& now) { change(value - bytes, now); }
  Rat finalize(const Rat& end) {
    change(0, end);
    return integral;
  }
};

struct Metrics {
  std::uint64_t param_accesses = 0;
  std::uint64_t param_hits = 0;
  std::uint64_t opt_accesses = 0;
  std::uint64_t opt_misses = 0;
  std::vector<Rat> param_wait_us;
  std::map<std::string, std::uint64_t> transfer_bytes;
  std::array<TierOccupancy, 3> occupancy;  // indexed by Tier

  TierOccupancy& occ(Tier t) { return occupancy[static_cast<std::size_t>(t)]; }

  void on_issue(const TransferRequest& req, const Rat& now) {
    if (!req.instant) {
      if (req.via_cpu_staging) {
        transfer_bytes[link_name(Tier::Nvme, Tier::Cpu)] += req.size_bytes;
        transfer_bytes[link_name(Tier::Cpu, Tier::Gpu)] += req.size_bytes;
      } else {
        transfer_bytes[link_name(req.src, req.dst)] += req.size_bytes;
      }
    }
    if (!req.src_retains) occ(req.src).change(-static_cast<std::int64_t>(req.size_bytes), now);
    if (req.instant && !req.dst_has_copy)
      occ(req.dst).change(static_cast<std::int64_t>(req.size_bytes), now);
  }

  void on_complete(const TransferRequest& req, const Rat& now) {
    if (!req.dst_has_copy) occ(req.dst).change(static_cast<std::int64_t>(req.size_bytes), now);
  }

  // Hit: served from GPU residency with zero residual wait and no transfer
  // issued for the tensor since its previous access.
  void record_param_access(const Rat& wait, bool transfer_since_last) {
    ++param_accesses;
    param_wait_us.push_back(wait);
    if (wait == Rat(0) && !transfer_since_last) ++param_hits;
  }

  // Optimizer hit: the state was CPU-resident with zero wait at its update.
  void record_opt_access(const Rat& wait) {
    ++opt_accesses;
    if (wait > Rat(0)) ++opt_misses;
  }

  SimReport finalize(const ExecutionTrace& trace, const MachineConfig& machine,
                     const RunConfig& config, const Rat& total, std::vector<Rat> per_iteration,
                     std::uint64_t fp16_in_nvme) {
    SimReport r;
    r.total_time_us = total;
    r.per_iteration_us = std::move(per_iteration);
    r.param_accesses = param_accesses;
    r.param_hits = param_hits;
    r.opt_accesses = opt_accesses;
    r.opt_misses = opt_misses;
    if (param_accesses > 0) r.hit_rate = Rat(BigInt(param_hits), BigInt(param_accesses));
    if (opt_accesses > 0) r.optimizer_miss_rate = Rat(BigInt(opt_misses), BigInt(opt_accesses));
    r.param_wait_us = std::move(param_wait_us);
    for (double thr : config.thresholds_us) {
      std::uint64_t below = 0;
      Rat limit = rat_from_double(thr);
      for (const Rat& w : r.param_wait_us)
        if (w < limit) ++below;
      Rat pct = param_accesses > 0 ? Rat(BigInt(below * 100), BigInt(param_accesses)) : Rat(0);
      r.pct_wait_below.emplace_back(thr, pct);
    }
    if (total > Rat(0)) {
      Rat gpu_int = occ(Tier::Gpu).finalize(total);
      Rat cpu_int = occ(Tier::Cpu).finalize(total);
      r.gpu_utilization_timeavg = gpu_int / (total * Rat(BigInt(machine.gpu_capacity_bytes)));
      r.cpu_utilization_timeavg = cpu_int / (total * Rat(BigInt(machine.cpu_capacity_bytes)));
    }
    r.fp16_in_nvme_count = fp16_in_nvme;
    r.transfer_bytes = std::move(transfer_bytes);
    r.profile_overhead_us = profile_overhead(trace);
    return r;
  }
};

// Tensor ids whose residency gates the step and feeds the access metrics:
// all ids for parameter steps, the optimizer-state ids for update steps.
std::vector<TensorId> metric_tensors(const ExecutionTrace& trace, const TraceStep& step);

void validate_run_config(const RunConfig& config);

}  // namespace tencache::detail
