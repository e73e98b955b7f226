#include "tencache/engine.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <deque>
#include <optional>
#include <queue>
#include <thread>
#include <tuple>
#include <unordered_map>

#include "engine_internal.hpp"

namespace tencache {

namespace {

using detail::EventLogger;
using detail::Metrics;

enum class EvKind : std::uint8_t { StepStart, StepEnd, TransferDone, IterationEnd };

struct Event {
  Rat time;
  std::uint64_t seq = 0;
  EvKind kind = EvKind::StepStart;
  std::size_t arg = 0;  // step index or transfer index
};

struct EventAfter {
  bool operator()(const Event& a, const Event& b) const {
    if (a.time != b.time) return a.time > b.time;
    return a.seq > b.seq;
  }
};

constexpr std::size_t link_key(Tier src, Tier dst) {
  return static_cast<std::size_t>(src) * 3 + static_cast<std::size_t>(dst);
}

// Deterministic discrete-event executor: one sequential step chain (the
// forward/backward GPU timeline and the optimizer CPU timeline never overlap
// by phase order) plus four serialized links and per-class staging slots.
class EventEngine {
 public:
  EventEngine(const ExecutionTrace& trace, const MachineConfig& machine, const RunConfig& config)
      : trace_(trace), machine_(machine), config_(config) {
    logger_.out = config.event_log;
  }

  SimReport execute() {
    detail::validate_run_config(config_);
    auto policy = make_policy(trace_, machine_, config_);
    policy_ = policy.get();
    IPolicy::InitInfo info = init_info_ = policy->init();
    metrics_.occ(Tier::Gpu).set(static_cast<std::int64_t>(info.gpu_resident_bytes), Rat(0));
    metrics_.occ(Tier::Cpu).set(static_cast<std::int64_t>(info.cpu_resident_bytes), Rat(0));
    metrics_.occ(Tier::Nvme).set(static_cast<std::int64_t>(info.nvme_resident_bytes), Rat(0));

    first_opt_step_ = trace_.steps.size();
    for (std::size_t i = 0; i < trace_.steps.size(); ++i)
      if (trace_.steps[i].phase == Phase::OptimizerUpdate) {
        first_opt_step_ = i;
        break;
      }

    if (trace_.steps.empty()) {
      std::vector<Rat> zeros(trace_.iterations, Rat(0));
      return metrics_.finalize(trace_, machine_, config_, Rat(0), std::move(zeros),
                               info.fp16_in_nvme_count);
    }

    first_attempt_.assign(trace_.steps.size(), std::nullopt);
    push_event(Rat(0), EvKind::StepStart, 0);
    while (!events_.empty()) {
      Event ev = events_.top();
      events_.pop();
      now_ = ev.time;
      switch (ev.kind) {
        case EvKind::StepStart: handle_step_start(ev.arg); break;
        case EvKind::StepEnd: handle_step_end(ev.arg); break;
        case EvKind::TransferDone: handle_transfer_done(ev.arg); break;
        case EvKind::IterationEnd: handle_iteration_end(); break;
      }
    }
    return metrics_.finalize(trace_, machine_, config_, total_time_, std::move(per_iteration_),
                             info.fp16_in_nvme_count);
  }

 private:
  struct Xfer {
    TransferRequest req;
    std::uint64_t seq = 0;
    Rat arrival;   // current leg's arrival at its link
    int leg = 0;   // staged: 0 = nvme->cpu, 1 = cpu->gpu
    bool done = false;
  };
  struct Link {
    std::optional<std::size_t> active;
    std::vector<std::size_t> waiting;
  };
  struct StagingSlot {
    bool busy = false;
    std::deque<std::size_t> waiting;
  };
  struct Track {
    int outstanding = 0;
    int issues_since_access = 0;
    Rat ready{0};
  };

  void push_event(const Rat& time, EvKind kind, std::size_t arg) {
    events_.push(Event{time, next_seq_++, kind, arg});
  }

  void handle_step_start(std::size_t index) { attempt_step_start(index); }

  void attempt_step_start(std::size_t index) {
    const TraceStep& step = trace_.steps[index];
    if (barrier_count_ > 0) {
      waiting_step_ = index;
      return;
    }
    if (!first_attempt_[index].has_value()) {
      first_attempt_[index] = now_;
      if (config_.restore_overlap && index == first_opt_step_ && !param_restore_done_) {
        param_restore_done_ = true;
        schedule_requests(policy_->on_param_restore_point());
      }
      schedule_requests(policy_->on_step_begin(step));
    }
    for (TensorId id : detail::metric_tensors(trace_, step)) {
      if (tracks_[id].outstanding > 0) {
        waiting_step_ = index;
        return;
      }
    }
    waiting_step_.reset();

    const Rat& attempt = *first_attempt_[index];
    for (TensorId id : detail::metric_tensors(trace_, step)) {
      Track& track = tracks_[id];
      Rat wait = track.ready > attempt ? track.ready - attempt : Rat(0);
      if (step.phase == Phase::OptimizerUpdate) {
        metrics_.record_opt_access(wait);
      } else {
        metrics_.record_param_access(wait, track.issues_since_access > 0);
      }
      track.issues_since_access = 0;
      if (wait > Rat(0)) logger_.log(now_, "stall", id, Tier::Gpu, Tier::Gpu);
    }
    Rat compute = rat_from_double(step.compute_us) * rat_from_double(config_.batch_scale);
    push_event(now_ + compute, EvKind::StepEnd, index);
  }

  void handle_step_end(std::size_t index) {
    const TraceStep& step = trace_.steps[index];
    schedule_requests(policy_->on_step_end(step));
    if (index + 1 < trace_.steps.size()) {
      push_event(now_, EvKind::StepStart, index + 1);
      return;
    }
    if (!param_restore_done_) {
      param_restore_done_ = true;
      schedule_requests(policy_->on_param_restore_point());
    }
    schedule_requests(policy_->on_iteration_end());
    draining_ = true;
    maybe_finish_iteration();
  }

  void handle_iteration_end() {
    draining_ = false;
    per_iteration_.push_back(now_ - iteration_start_);
    iteration_start_ = now_;
    metrics_.occ(Tier::Nvme).set(static_cast<std::int64_t>(init_info_.nvme_resident_bytes), now_);
    policy_->reset_iteration();
    param_restore_done_ = false;
    ++iteration_;
    if (iteration_ < trace_.iterations) {
      std::fill(first_attempt_.begin(), first_attempt_.end(), std::nullopt);
      push_event(now_, EvKind::StepStart, 0);
    } else {
      total_time_ = now_;
    }
  }

  void maybe_finish_iteration() {
    if (draining_ && outstanding_total_ == 0) push_event(now_, EvKind::IterationEnd, 0);
  }

  void schedule_requests(const std::vector<TransferRequest>& requests) {
    for (const TransferRequest& req : requests) schedule_one(req);
  }

  void schedule_one(const TransferRequest& req) {
    logger_.log(now_, detail::kind_tag(req.kind), req.tensor_id, req.src, req.dst);
    metrics_.on_issue(req, now_);
    if (req.instant) return;

    std::size_t idx = xfers_.size();
    Xfer x;
    x.req = req;
    x.seq = next_seq_++;
    x.arrival = now_;
    xfers_.push_back(x);
    ++outstanding_total_;
    Track& track = tracks_[req.tensor_id];
    ++track.outstanding;
    ++track.issues_since_access;
    if (req.blocking) ++barrier_count_;

    if (req.via_cpu_staging) {
      StagingSlot& slot = staging_[req.size_bytes];
      if (slot.busy) {
        slot.waiting.push_back(idx);
      } else {
        slot.busy = true;
        arrive(link_key(Tier::Nvme, Tier::Cpu), idx);
      }
    } else {
      arrive(link_key(req.src, req.dst), idx);
    }
  }

  void arrive(std::size_t link, std::size_t idx) {
    xfers_[idx].arrival = now_;
    links_[link].waiting.push_back(idx);
    start_next(link);
  }

  // Serve in (arrival, issue seq) order; staged second legs keep their seq.
  void start_next(std::size_t link) {
    Link& l = links_[link];
    if (l.active || l.waiting.empty()) return;
    std::size_t best = 0;
    for (std::size_t i = 1; i < l.waiting.size(); ++i) {
      const Xfer& a = xfers_[l.waiting[i]];
      const Xfer& b = xfers_[l.waiting[best]];
      if (a.arrival < b.arrival || (a.arrival == b.arrival && a.seq < b.seq)) best = i;
    }
    std::size_t idx = l.waiting[best];
    l.waiting.erase(l.waiting.begin() + static_cast<std::ptrdiff_t>(best));
    l.active = idx;
    push_event(now_ + leg_duration(xfers_[idx]), EvKind::TransferDone, idx);
  }

  Rat leg_duration(const Xfer& x) const {
    if (x.req.via_cpu_staging) {
      return x.leg == 0 ? transfer_time_us(machine_, Tier::Nvme, Tier::Cpu, x.req.size_bytes)
                        : transfer_time_us(machine_, Tier::Cpu, Tier::Gpu, x.req.size_bytes);
    }
    return transfer_time_us(machine_, x.req.src, x.req.dst, x.req.size_bytes);
  }

  std::size_t current_link(const Xfer& x) const {
    if (x.req.via_cpu_staging)
      return x.leg == 0 ? link_key(Tier::Nvme, Tier::Cpu) : link_key(Tier::Cpu, Tier::Gpu);
    return link_key(x.req.src, x.req.dst);
  }

  void handle_transfer_done(std::size_t idx) {
    Xfer& x = xfers_[idx];
    std::size_t link = current_link(x);
    links_[link].active.reset();
    start_next(link);

    if (x.req.via_cpu_staging && x.leg == 0) {
      x.leg = 1;
      arrive(link_key(Tier::Cpu, Tier::Gpu), idx);
      return;
    }

    x.done = true;
    --outstanding_total_;
    metrics_.on_complete(x.req, now_);
    Track& track = tracks_[x.req.tensor_id];
    --track.outstanding;
    if (now_ > track.ready) track.ready = now_;
    if (x.req.blocking) --barrier_count_;
    if (x.req.via_cpu_staging) {
      StagingSlot& slot = staging_[x.req.size_bytes];
      slot.busy = false;
      if (!slot.waiting.empty()) {
        std::size_t next = slot.waiting.front();
        slot.waiting.pop_front();
        slot.busy = true;
        arrive(link_key(Tier::Nvme, Tier::Cpu), next);
      }
    }
    if (waiting_step_) attempt_step_start(*waiting_step_);
    maybe_finish_iteration();
  }

  const ExecutionTrace& trace_;
  const MachineConfig& machine_;
  RunConfig config_;
  EventLogger logger_;
  Metrics metrics_;
  IPolicy* policy_ = nullptr;
  IPolicy::InitInfo init_info_;

  std::priority_queue<Event, std::vector<Event>, EventAfter> events_;
  std::uint64_t next_seq_ = 0;
  Rat now_{0};

  std::vector<Xfer> xfers_;
  std::array<Link, 9> links_;
  std::map<std::uint64_t, StagingSlot> staging_;
  std::unordered_map<TensorId, Track> tracks_;
  std::size_t outstanding_total_ = 0;
  int barrier_count_ = 0;
  std::optional<std::size_t> waiting_step_;
  std::vector<std::optional<Rat>> first_attempt_{};

  std::size_t first_opt_step_ = 0;
  bool param_restore_done_ = false;
  bool draining_ = false;
  std::uint32_t iteration_ = 0;
  Rat iteration_start_{0};
  std::vector<Rat> per_iteration_;
  Rat total_time_{0};
};

}  // namespace

SimReport run(const ExecutionTrace& trace, const MachineConfig& machine, const RunConfig& config) {
  validate_trace(trace);
  EventEngine engine(trace, machine, config);
  return engine.execute();
}

SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "batch_scale") return SweepAxis::BatchScale;
  if (name == "gpu_capacity") return SweepAxis::GpuCapacity;
  if (name == "cpu_capacity") return SweepAxis::CpuCapacity;
  if (name == "pinned") return SweepAxis::Pinned;
  throw ConfigError("unknown sweep axis: " + name);
}

const char* to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::BatchScale: return "batch_scale";
    case SweepAxis::GpuCapacity: return "gpu_capacity";
    case SweepAxis::CpuCapacity: return "cpu_capacity";
    case SweepAxis::Pinned: return "pinned";
  }
  return "?";
}

std::vector<SimReport> sweep(const ExecutionTrace& trace, const MachineConfig& machine,
                             const RunConfig& config, SweepAxis axis,
                             const std::vector<double>& values, unsigned threads) {
  std::vector<SimReport> reports(values.size());
  auto run_one = [&](std::size_t i) {
    MachineConfig m = machine;
    RunConfig c = config;
    c.event_log = nullptr;  // per-run logs are meaningless interleaved
    switch (axis) {
      case SweepAxis::BatchScale: c.batch_scale = values[i]; break;
      case SweepAxis::GpuCapacity: m.gpu_capacity_bytes = static_cast<std::uint64_t>(values[i]); break;
      case SweepAxis::CpuCapacity: m.cpu_capacity_bytes = static_cast<std::uint64_t>(values[i]); break;
      case SweepAxis::Pinned:
        m.cpu_memory_class = values[i] != 0 ? CpuMemoryClass::Pinned : CpuMemoryClass::Pageable;
        break;
    }
    reports[i] = run(trace, m, c);
  };

  if (threads <= 1) {
    for (std::size_t i = 0; i < values.size(); ++i) run_one(i);
    return reports;
  }
  std::vector<std::thread> pool;
  std::atomic<std::size_t> cursor{0};
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = cursor.fetch_add(1); i < values.size(); i = cursor.fetch_add(1))
        run_one(i);
    });
  for (auto& th : pool) th.join();
  return reports;
}

}  // namespace tencache
