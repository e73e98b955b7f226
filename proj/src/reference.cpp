// Brute-force oracle for the event engine: a lazy chronological interpreter
// that re-scans every transfer to find each next transition instead of
// keeping an event heap. Used only by tests.

#include <algorithm>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <unordered_map>

#include "engine_internal.hpp"
#include "tencache/engine.hpp"

namespace tencache {

namespace {

using detail::Metrics;

constexpr std::size_t ref_link_key(Tier src, Tier dst) {
  return static_cast<std::size_t>(src) * 3 + static_cast<std::size_t>(dst);
}

class ReferenceEngine {
 public:
  ReferenceEngine(const ExecutionTrace& trace, const MachineConfig& machine,
                  const RunConfig& config)
      : trace_(trace), machine_(machine), config_(config) {
    logger_.out = config.event_log;
  }

  SimReport execute() {
    detail::validate_run_config(config_);
    auto policy = make_policy(trace_, machine_, config_);
    IPolicy::InitInfo info = policy->init();
    metrics_.occ(Tier::Gpu).set(static_cast<std::int64_t>(info.gpu_resident_bytes), Rat(0));
    metrics_.occ(Tier::Cpu).set(static_cast<std::int64_t>(info.cpu_resident_bytes), Rat(0));
    metrics_.occ(Tier::Nvme).set(static_cast<std::int64_t>(info.nvme_resident_bytes), Rat(0));

    std::size_t first_opt_step = trace_.steps.size();
    for (std::size_t i = 0; i < trace_.steps.size(); ++i)
      if (trace_.steps[i].phase == Phase::OptimizerUpdate) {
        first_opt_step = i;
        break;
      }

    if (trace_.steps.empty()) {
      std::vector<Rat> zeros(trace_.iterations, Rat(0));
      return metrics_.finalize(trace_, machine_, config_, Rat(0), std::move(zeros),
                               info.fp16_in_nvme_count);
    }

    Rat clock(0);
    Rat iteration_start(0);
    std::vector<Rat> per_iteration;
    for (std::uint32_t iter = 0; iter < trace_.iterations; ++iter) {
      bool param_restore_done = false;
      for (std::size_t i = 0; i < trace_.steps.size(); ++i) {
        const TraceStep& step = trace_.steps[i];
        // A blocking swap-out serializes the next step behind it.
        advance_while([&] { return barrier_count_ > 0; });
        Rat attempt = std::max(clock, barrier_release_);
        if (config_.restore_overlap && i == first_opt_step && !param_restore_done) {
          param_restore_done = true;
          post(policy->on_param_restore_point(), attempt);
        }
        post(policy->on_step_begin(step), attempt);

        Rat start = attempt;
        std::vector<TensorId> stalled;
        for (TensorId id : detail::metric_tensors(trace_, step)) {
          advance_while([&] { return outstanding_[id] > 0; });
          Rat wait = ready_[id] > attempt ? ready_[id] - attempt : Rat(0);
          if (step.phase == Phase::OptimizerUpdate) {
            metrics_.record_opt_access(wait);
          } else {
            metrics_.record_param_access(wait, issues_since_access_[id] > 0);
          }
          issues_since_access_[id] = 0;
          if (wait > Rat(0)) {
            if (ready_[id] > start) start = ready_[id];
            stalled.push_back(id);
          }
        }
        for (TensorId id : stalled) logger_.log(start, "stall", id, Tier::Gpu, Tier::Gpu);
        clock = start + rat_from_double(step.compute_us) * rat_from_double(config_.batch_scale);
        post(policy->on_step_end(step), clock);
      }
      if (!param_restore_done) post(policy->on_param_restore_point(), clock);
      post(policy->on_iteration_end(), clock);
      advance_while([&] { return live_transfers_ > 0; });
      Rat iter_end = std::max(clock, last_completion_);
      per_iteration.push_back(iter_end - iteration_start);
      iteration_start = iter_end;
      clock = iter_end;
      metrics_.occ(Tier::Nvme).set(static_cast<std::int64_t>(info.nvme_resident_bytes), iter_end);
      policy->reset_iteration();
    }
    return metrics_.finalize(trace_, machine_, config_, clock, std::move(per_iteration),
                             info.fp16_in_nvme_count);
  }

 private:
  struct RXfer {
    TransferRequest req;
    std::uint64_t seq = 0;
    int leg = 0;
    bool arrival_known = false;
    Rat arrival;
    bool active = false;
    Rat leg_done;
    bool finished = false;
  };

  void post(const std::vector<TransferRequest>& requests, const Rat& when) {
    for (const TransferRequest& req : requests) {
      logger_.log(when, detail::kind_tag(req.kind), req.tensor_id, req.src, req.dst);
      metrics_.on_issue(req, when);
      if (req.instant) continue;
      RXfer x;
      x.req = req;
      x.seq = next_seq_++;
      ++live_transfers_;
      ++outstanding_[req.tensor_id];
      ++issues_since_access_[req.tensor_id];
      if (req.blocking) ++barrier_count_;
      if (req.via_cpu_staging) {
        auto& slot = staging_[req.size_bytes];
        if (slot.busy) {
          x.arrival_known = false;
          slot.waiting.push_back(xfers_.size());
        } else {
          slot.busy = true;
          x.arrival_known = true;
          x.arrival = when;
        }
      } else {
        x.arrival_known = true;
        x.arrival = when;
      }
      xfers_.push_back(x);
    }
  }

  std::size_t leg_link(const RXfer& x) const {
    if (x.req.via_cpu_staging)
      return x.leg == 0 ? ref_link_key(Tier::Nvme, Tier::Cpu) : ref_link_key(Tier::Cpu, Tier::Gpu);
    return ref_link_key(x.req.src, x.req.dst);
  }

  Rat leg_duration(const RXfer& x) const {
    if (x.req.via_cpu_staging)
      return x.leg == 0 ? transfer_time_us(machine_, Tier::Nvme, Tier::Cpu, x.req.size_bytes)
                        : transfer_time_us(machine_, Tier::Cpu, Tier::Gpu, x.req.size_bytes);
    return transfer_time_us(machine_, x.req.src, x.req.dst, x.req.size_bytes);
  }

  // Performs the single earliest pending transition (a link starting its next
  // queued leg, or the earliest active leg completing). Returns false when
  // nothing is in flight.
  bool advance_one() {
    // Earliest startable leg per link, FIFO by (arrival, seq).
    std::optional<std::size_t> best_start;
    Rat best_start_time;
    for (std::size_t i = 0; i < xfers_.size(); ++i) {
      const RXfer& x = xfers_[i];
      if (x.finished || x.active || !x.arrival_known) continue;
      std::size_t link = leg_link(x);
      if (link_busy_[link]) continue;
      bool earlier = false;
      for (std::size_t j = 0; j < xfers_.size(); ++j) {
        if (i == j) continue;
        const RXfer& y = xfers_[j];
        if (y.finished || y.active || !y.arrival_known || leg_link(y) != link) continue;
        if (y.arrival < x.arrival || (y.arrival == x.arrival && y.seq < x.seq)) earlier = true;
      }
      if (earlier) continue;
      Rat start = std::max(x.arrival, link_free_[link]);
      if (!best_start || start < best_start_time) {
        best_start = i;
        best_start_time = start;
      }
    }
    // Earliest completion among active legs.
    std::optional<std::size_t> best_done;
    Rat best_done_time;
    for (std::size_t i = 0; i < xfers_.size(); ++i) {
      const RXfer& x = xfers_[i];
      if (!x.active) continue;
      if (!best_done || x.leg_done < best_done_time ||
          (x.leg_done == best_done_time && x.seq < xfers_[*best_done].seq)) {
        best_done = i;
        best_done_time = x.leg_done;
      }
    }

    if (best_start && (!best_done || best_start_time <= best_done_time)) {
      RXfer& x = xfers_[*best_start];
      std::size_t link = leg_link(x);
      link_busy_[link] = true;
      x.active = true;
      x.leg_done = best_start_time + leg_duration(x);
      return true;
    }
    if (!best_done) return false;

    RXfer& x = xfers_[*best_done];
    std::size_t link = leg_link(x);
    link_busy_[link] = false;
    link_free_[link] = x.leg_done;
    x.active = false;
    Rat now = x.leg_done;
    if (x.req.via_cpu_staging && x.leg == 0) {
      x.leg = 1;
      x.arrival = now;
      x.arrival_known = true;
      return true;
    }
    x.finished = true;
    --live_transfers_;
    metrics_.on_complete(x.req, now);
    --outstanding_[x.req.tensor_id];
    if (now > ready_[x.req.tensor_id]) ready_[x.req.tensor_id] = now;
    if (now > last_completion_) last_completion_ = now;
    if (x.req.blocking) {
      --barrier_count_;
      if (now > barrier_release_) barrier_release_ = now;
    }
    if (x.req.via_cpu_staging) {
      auto& slot = staging_[x.req.size_bytes];
      slot.busy = false;
      if (!slot.waiting.empty()) {
        std::size_t next = slot.waiting.front();
        slot.waiting.pop_front();
        slot.busy = true;
        xfers_[next].arrival = now;
        xfers_[next].arrival_known = true;
      }
    }
    return true;
  }

  template <typename Pred>
  void advance_while(Pred keep_going) {
    while (keep_going()) {
      if (!advance_one()) break;
    }
  }

  const ExecutionTrace& trace_;
  const MachineConfig& machine_;
  RunConfig config_;
  detail::EventLogger logger_;
  Metrics metrics_;

  std::vector<RXfer> xfers_;
  std::array<bool, 9> link_busy_{};
  std::array<Rat, 9> link_free_{};
  struct Slot {
    bool busy = false;
    std::deque<std::size_t> waiting;
  };
  std::map<std::uint64_t, Slot> staging_;
  std::unordered_map<TensorId, int> outstanding_;
  std::unordered_map<TensorId, int> issues_since_access_;
  std::unordered_map<TensorId, Rat> ready_;
  std::size_t live_transfers_ = 0;
  int barrier_count_ = 0;
  Rat barrier_release_{0};
  Rat last_completion_{0};
  std::uint64_t next_seq_ = 0;
};

}  // namespace

SimReport run_reference(const ExecutionTrace& trace, const MachineConfig& machine,
                        const RunConfig& config) {
  if (trace.tensors.size() > kReferenceTensorGuard)
    throw ConfigError("run_reference: trace exceeds the " +
                      std::to_string(kReferenceTensorGuard) + "-tensor guard");
  validate_trace(trace);
  ReferenceEngine engine(trace, machine, config);
  return engine.execute();
}

}  // namespace tencache
