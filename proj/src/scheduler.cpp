#include "tencache/scheduler.hpp"

#include <algorithm>
#include <stdexcept>

namespace tencache {

namespace {

class SchedulerError : public std::logic_error {
 public:
  explicit SchedulerError(const std::string& what) : std::logic_error(what) {}
};

TransferRequest make_request(TensorId id, Tier src, Tier dst, std::uint64_t size,
                             TransferRequest::Kind kind) {
  TransferRequest req;
  req.tensor_id = id;
  req.src = src;
  req.dst = dst;
  req.size_bytes = size;
  req.kind = kind;
  return req;
}

}  // namespace

std::uint64_t SchedulerState::tensor_size(TensorId id) const {
  return trace->tensor(id).size_bytes;
}

Tier SchedulerState::final_loc(TensorId id) const {
  if (auto it = placement.location_of.find(id); it != placement.location_of.end())
    return it->second;
  return opt_placement.location_of.at(id);
}

std::optional<std::uint32_t> SchedulerState::next_use_row(TensorId id) const {
  auto it = access_rows.find(id);
  if (it == access_rows.end()) return std::nullopt;
  auto row = std::lower_bound(it->second.begin(), it->second.end(), exec_row);
  if (row == it->second.end()) return std::nullopt;
  return *row;
}

SchedulerState make_scheduler_state(const ExecutionTrace& trace, PrefetchTable table,
                                    PlacementState params, PlacementState opt_states,
                                    BufferPool gpu_pool, BufferPool cpu_pool,
                                    BufferPool cpu_opt_pool) {
  SchedulerState st;
  st.trace = &trace;
  st.table = std::move(table);
  st.placement = std::move(params);
  st.opt_placement = std::move(opt_states);
  st.gpu_pool = std::move(gpu_pool);
  st.cpu_pool = std::move(cpu_pool);
  st.cpu_opt_pool = std::move(cpu_opt_pool);

  for (const PrefetchRow& row : st.table.rows)
    st.access_rows[row.tensor_id].push_back(row.order);

  std::size_t rows = 0;
  st.step_row_end.resize(trace.steps.size(), 0);
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const TraceStep& s = trace.steps[i];
    if (s.phase == Phase::Forward || s.phase == Phase::Backward) rows += s.tensor_ids.size();
    st.step_row_end[i] = rows;
  }

  for (const auto& [state_id, param_id] : trace.optimizer_pairs())
    st.opt_update_order.push_back(state_id);

  for (const auto& [id, tier] : st.placement.location_of) st.current_loc[id] = tier;
  for (const auto& [id, tier] : st.opt_placement.location_of) st.current_loc[id] = tier;
  st.active_window.insert(st.placement.active_window.begin(), st.placement.active_window.end());
  st.nvme_copy = st.placement.nvme_copy;
  st.nvme_copy.insert(st.opt_placement.nvme_copy.begin(), st.opt_placement.nvme_copy.end());

  bool any_nvme = std::any_of(st.current_loc.begin(), st.current_loc.end(),
                              [](const auto& kv) { return kv.second == Tier::Nvme; });
  st.mode = any_nvme ? SchedulerMode::CpuGpuNvme : SchedulerMode::CpuGpu;

  // Seed the pools to match placement.
  for (TensorId id : st.placement.active_window)
    if (!st.gpu_pool.acquire(st.tensor_size(id), id))
      throw SchedulerError("placement exceeds GPU pool");
  for (const auto& [id, tier] : st.placement.location_of)
    if (tier == Tier::Cpu && !st.cpu_pool.acquire(st.tensor_size(id), id))
      throw SchedulerError("placement exceeds CPU pool");
  for (TensorId id : st.opt_update_order) {
    if (st.current_loc.at(id) == Tier::Cpu) {
      if (!st.cpu_opt_pool.acquire(st.tensor_size(id), id))
        throw SchedulerError("optimizer placement exceeds CPU pool");
    } else {
      st.opt_pending.push_back(id);
    }
  }

  st.initial_gpu_pool = st.gpu_pool;
  st.initial_cpu_pool = st.cpu_pool;
  st.initial_cpu_opt_pool = st.cpu_opt_pool;
  st.initial_nvme_copy = st.nvme_copy;
  return st;
}

namespace {

// Largest distance-to-next-use; never-used-again beats every row; ties go to
// the lowest tensor id.
std::optional<TensorId> rank_victim(const SchedulerState& st,
                                    const std::vector<std::pair<std::uint32_t, TensorId>>& cands,
                                    const std::set<TensorId>& exclude) {
  std::optional<TensorId> best;
  bool best_unused = false;
  std::uint32_t best_row = 0;
  for (const auto& [buf, tensor] : cands) {
    if (exclude.count(tensor)) continue;
    auto next = st.next_use_row(tensor);
    bool unused = !next.has_value();
    std::uint32_t row = next.value_or(0);
    bool better;
    if (!best)
      better = true;
    else if (unused != best_unused)
      better = unused;
    else if (unused)
      better = tensor < *best;
    else if (row != best_row)
      better = row > best_row;
    else
      better = tensor < *best;
    if (better) {
      best = tensor;
      best_unused = unused;
      best_row = row;
    }
  }
  return best;
}

// Swap one same-size CPU occupant to NVMe to free a parameter-cache buffer.
// GPU-designated occupants are preferred victims.
void swap_cpu_victim_to_nvme(SchedulerState& st, std::uint64_t size,
                             std::vector<TransferRequest>& out) {
  auto designated = st.cpu_pool.occupants(size, true);
  std::optional<TensorId> victim = rank_victim(st, designated, {});
  if (!victim) victim = rank_victim(st, st.cpu_pool.occupants(size, false), {});
  if (!victim) throw SchedulerError("no CPU buffer of size " + std::to_string(size) + " exists");

  st.cpu_pool.release(*st.cpu_pool.buffer_of(*victim));
  TransferRequest req = make_request(*victim, Tier::Cpu, Tier::Nvme, size,
                                     TransferRequest::Kind::Evict);
  if (st.nvme_copy.count(*victim)) {
    req.instant = true;  // clean copy already in NVMe
    req.dst_has_copy = true;
  } else {
    st.nvme_copy.insert(*victim);
  }
  st.current_loc[*victim] = Tier::Nvme;
  out.push_back(req);
}

// GPU buffer acquisition for a parameter heading to GPU; evicts the
// farthest-next-use same-class resident when the class is exhausted.
std::uint32_t acquire_gpu_buffer(SchedulerState& st, TensorId id, std::uint64_t size,
                                 const std::set<TensorId>& exclude,
                                 std::vector<TransferRequest>& out) {
  if (auto buf = st.gpu_pool.acquire(size, id)) return *buf;
  auto victim = rank_victim(st, st.gpu_pool.occupants(size, false), exclude);
  if (!victim)
    throw SchedulerError("GPU class of size " + std::to_string(size) + " has no evictable buffer");
  st.active_window.erase(*victim);
  auto evictions = evict_tensor(st, *victim);
  out.insert(out.end(), evictions.begin(), evictions.end());
  auto buf = st.gpu_pool.acquire(size, id);
  if (!buf) throw SchedulerError("GPU buffer still unavailable after eviction");
  return *buf;
}

// Stage `id` into GPU from wherever it currently lives. Assumes a window slot
// and GPU buffer decision have been made by the caller.
void emit_fetch(SchedulerState& st, TensorId id, TransferRequest::Kind kind,
                std::vector<TransferRequest>& out) {
  std::uint64_t size = st.tensor_size(id);
  Tier from = st.current_loc.at(id);
  if (from == Tier::Cpu) {
    st.cpu_pool.release(*st.cpu_pool.buffer_of(id));
    out.push_back(make_request(id, Tier::Cpu, Tier::Gpu, size, kind));
  } else {
    TransferRequest req = make_request(id, Tier::Nvme, Tier::Gpu, size, kind);
    req.via_cpu_staging = true;
    req.src_retains = st.nvme_copy.count(id) > 0;  // replica stays for later release
    out.push_back(req);
  }
  st.current_loc[id] = Tier::Gpu;
}

}  // namespace

std::vector<TransferRequest> evict_tensor(SchedulerState& state, TensorId evict_tensor_id) {
  std::vector<TransferRequest> out;
  std::uint64_t size = state.tensor_size(evict_tensor_id);
  auto gpu_buf = state.gpu_pool.buffer_of(evict_tensor_id);
  if (!gpu_buf) throw SchedulerError("evict_tensor: tensor not in a GPU buffer");

  if (state.final_loc(evict_tensor_id) == Tier::Nvme) {
    // The NVMe replica is authoritative; only the GPU buffer is returned.
    state.gpu_pool.release(*gpu_buf);
    state.current_loc[evict_tensor_id] = Tier::Nvme;
    TransferRequest req = make_request(evict_tensor_id, Tier::Gpu, Tier::Nvme, size,
                                       TransferRequest::Kind::Evict);
    req.instant = true;
    req.dst_has_copy = true;
    out.push_back(req);
    return out;
  }

  if (state.cpu_pool.free_count(size) == 0) swap_cpu_victim_to_nvme(state, size, out);
  auto cpu_buf = state.cpu_pool.acquire(size, evict_tensor_id);
  if (!cpu_buf) throw SchedulerError("evict_tensor: CPU buffer unavailable after swap");
  if (state.final_loc(evict_tensor_id) == Tier::Gpu)
    state.cpu_pool.set_designated(*cpu_buf, true);
  out.push_back(make_request(evict_tensor_id, Tier::Gpu, Tier::Cpu, size,
                             TransferRequest::Kind::Evict));
  state.gpu_pool.release(*gpu_buf);
  state.current_loc[evict_tensor_id] = Tier::Cpu;
  return out;
}

std::vector<TransferRequest> prefetch_tensor(SchedulerState& state,
                                             const std::vector<TensorId>& evicted_tensor_list) {
  std::vector<TransferRequest> out;
  const auto& rows = state.table.rows;

  for (TensorId evict_id : evicted_tensor_list) {
    if (state.table.cursor >= rows.size()) continue;
    if (!state.active_window.count(evict_id)) continue;

    std::size_t saved_cursor = state.table.cursor;
    state.active_window.erase(evict_id);
    while (state.table.cursor < rows.size() &&
           state.active_window.count(rows[state.table.cursor].tensor_id))
      ++state.table.cursor;

    if (state.table.cursor >= rows.size() ||
        rows[state.table.cursor].tensor_id == evict_id) {
      // Everything still scheduled is resident, or the next needed tensor is
      // the one that just completed: evicting it would only force a reload.
      state.active_window.insert(evict_id);
      state.table.cursor = saved_cursor;
      state.halted = true;
      continue;
    }

    TensorId target = rows[state.table.cursor].tensor_id;
    std::uint64_t target_size = state.tensor_size(target);

    // When the paired eviction cannot free a buffer of the target's class an
    // extra same-class resident has to make room; abort if none exists.
    if (state.gpu_pool.free_count(target_size) == 0 &&
        state.tensor_size(evict_id) != target_size) {
      auto residents = state.gpu_pool.occupants(target_size, false);
      std::optional<TensorId> victim = rank_victim(state, residents, {evict_id});
      if (!victim) {
        state.active_window.insert(evict_id);
        state.table.cursor = saved_cursor;
        continue;
      }
    }

    // Swap semantics: the target's CPU buffer frees as its bytes leave for
    // the GPU, which is what gives the eviction below a slot to land in.
    bool target_from_cpu = state.current_loc.at(target) == Tier::Cpu;
    if (target_from_cpu) state.cpu_pool.release(*state.cpu_pool.buffer_of(target));

    auto evictions = evict_tensor(state, evict_id);
    out.insert(out.end(), evictions.begin(), evictions.end());

    state.active_window.insert(target);
    acquire_gpu_buffer(state, target, target_size, {evict_id, target}, out);
    if (target_from_cpu) {
      out.push_back(make_request(target, Tier::Cpu, Tier::Gpu, target_size,
                                 TransferRequest::Kind::Prefetch));
    } else {
      TransferRequest req = make_request(target, Tier::Nvme, Tier::Gpu, target_size,
                                         TransferRequest::Kind::Prefetch);
      req.via_cpu_staging = true;
      req.src_retains = state.nvme_copy.count(target) > 0;
      out.push_back(req);
    }
    state.current_loc[target] = Tier::Gpu;
    ++state.table.cursor;
  }
  return out;
}

bool halt_check(const SchedulerState& state) {
  for (std::size_t i = state.table.cursor; i < state.table.rows.size(); ++i)
    if (!state.active_window.count(state.table.rows[i].tensor_id)) return false;
  return true;
}

std::vector<TransferRequest> on_step_start(SchedulerState& state, const TraceStep& step) {
  std::vector<TransferRequest> out;
  state.halted = false;
  state.exec_row = std::max(state.exec_row, state.step_row_end[step.step_index]);
  state.table.cursor = std::max(state.table.cursor, state.exec_row);

  if (step.phase == Phase::Forward || step.phase == Phase::Backward) {
    std::set<TensorId> step_set(step.tensor_ids.begin(), step.tensor_ids.end());
    for (TensorId id : step.tensor_ids) {
      if (!state.current_loc.count(id))
        throw SchedulerError("access to unplaced tensor " + std::to_string(id));
      if (state.current_loc.at(id) == Tier::Gpu) continue;
      // Demand miss: the schedule did not stage this access in time.
      state.active_window.insert(id);
      acquire_gpu_buffer(state, id, state.tensor_size(id), step_set, out);
      emit_fetch(state, id, TransferRequest::Kind::Prefetch, out);
    }
  } else {
    // Optimizer update: the state tensor must be CPU-resident. States whose
    // class has no pool slot run through a transient buffer.
    TensorId state_id = step.tensor_ids.front();
    if (state.current_loc.at(state_id) != Tier::Cpu) {
      std::uint64_t size = state.tensor_size(state_id);
      bool pooled = state.cpu_opt_pool.has_class(size) &&
                    state.cpu_opt_pool.acquire(size, state_id).has_value();
      if (!pooled) state.opt_transient.insert(state_id);
      std::erase(state.opt_pending, state_id);
      out.push_back(make_request(state_id, Tier::Nvme, Tier::Cpu, size,
                                 TransferRequest::Kind::Prefetch));
      state.current_loc[state_id] = Tier::Cpu;
    }
  }
  return out;
}

std::vector<TransferRequest> optimizer_on_update_end(SchedulerState& state, TensorId state_id) {
  std::vector<TransferRequest> out;
  std::uint64_t size = state.tensor_size(state_id);

  if (state.opt_transient.count(state_id)) {
    // Updated outside the pool: write straight back.
    out.push_back(make_request(state_id, Tier::Cpu, Tier::Nvme, size,
                               TransferRequest::Kind::Evict));
    state.current_loc[state_id] = Tier::Nvme;
    state.opt_transient.erase(state_id);
    return out;
  }

  auto pending = std::find_if(state.opt_pending.begin(), state.opt_pending.end(),
                              [&](TensorId id) { return state.tensor_size(id) == size; });
  bool write_back_home = state.final_loc(state_id) == Tier::Nvme;
  if (pending == state.opt_pending.end() && !write_back_home) return out;  // keep resident

  state.cpu_opt_pool.release(*state.cpu_opt_pool.buffer_of(state_id));
  out.push_back(make_request(state_id, Tier::Cpu, Tier::Nvme, size,
                             TransferRequest::Kind::Evict));
  state.current_loc[state_id] = Tier::Nvme;

  if (pending != state.opt_pending.end()) {
    TensorId next = *pending;
    state.opt_pending.erase(pending);
    state.cpu_opt_pool.acquire(size, next);
    out.push_back(make_request(next, Tier::Nvme, Tier::Cpu, size,
                               TransferRequest::Kind::Prefetch));
    state.current_loc[next] = Tier::Cpu;
  }
  return out;
}

std::vector<TransferRequest> optimizer_step_schedule(const SchedulerState& state) {
  SchedulerState scratch = state;
  std::vector<TransferRequest> out;
  for (TensorId id : scratch.opt_update_order) {
    if (scratch.current_loc.at(id) != Tier::Cpu) {
      // Synchronous path for states never staged in time.
      std::uint64_t size = scratch.tensor_size(id);
      bool pooled = scratch.cpu_opt_pool.has_class(size) &&
                    scratch.cpu_opt_pool.acquire(size, id).has_value();
      if (!pooled) scratch.opt_transient.insert(id);
      std::erase(scratch.opt_pending, id);
      out.push_back(make_request(id, Tier::Nvme, Tier::Cpu, size,
                                 TransferRequest::Kind::Prefetch));
      scratch.current_loc[id] = Tier::Cpu;
    }
    auto reqs = optimizer_on_update_end(scratch, id);
    out.insert(out.end(), reqs.begin(), reqs.end());
  }
  return out;
}

std::vector<TransferRequest> restore_final_locations(SchedulerState& state, RestoreScope scope) {
  std::vector<TransferRequest> out;
  auto restore_one = [&](TensorId id) {
    Tier cur = state.current_loc.at(id);
    Tier fin = state.final_loc(id);
    if (cur == fin) return;
    TransferRequest req = make_request(id, cur, fin, state.tensor_size(id),
                                       TransferRequest::Kind::Restore);
    if (cur == Tier::Gpu && fin == Tier::Nvme && state.nvme_copy.count(id)) {
      req.instant = true;
      req.dst_has_copy = true;
    }
    if (cur == Tier::Nvme && fin == Tier::Gpu) {
      req.via_cpu_staging = true;
      req.src_retains = true;  // replica stays until the boundary reset
    }
    out.push_back(req);
    state.current_loc[id] = fin;
  };

  if (scope != RestoreScope::OptimizerStates)
    for (const auto& [id, tier] : state.placement.location_of) restore_one(id);
  if (scope != RestoreScope::Parameters)
    for (const auto& [id, tier] : state.opt_placement.location_of) restore_one(id);
  return out;
}

void reset_iteration(SchedulerState& state) {
  state.table.cursor = 0;
  state.exec_row = 0;
  state.halted = false;
  state.gpu_pool = state.initial_gpu_pool;
  state.cpu_pool = state.initial_cpu_pool;
  state.cpu_opt_pool = state.initial_cpu_opt_pool;
  state.nvme_copy = state.initial_nvme_copy;
  state.active_window.clear();
  state.active_window.insert(state.placement.active_window.begin(),
                             state.placement.active_window.end());
  for (const auto& [id, tier] : state.placement.location_of) state.current_loc[id] = tier;
  for (const auto& [id, tier] : state.opt_placement.location_of) state.current_loc[id] = tier;
  state.opt_pending.clear();
  for (TensorId id : state.opt_update_order)
    if (state.current_loc.at(id) != Tier::Cpu) state.opt_pending.push_back(id);
  state.opt_transient.clear();
}

}  // namespace tencache
