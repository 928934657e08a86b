#include "kvsim/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace kvsim {

const char* policy_name(Policy p) {
    switch (p) {
        case Policy::LruGpuOnly: return "LRU_GPU_ONLY";
        case Policy::LruReactiveHicache: return "LRU_REACTIVE_HICACHE";
        case Policy::Kvflow: return "KVFLOW";
    }
    return "?";
}

Policy policy_from_name(const std::string& name) {
    if (name == "LRU_GPU_ONLY") return Policy::LruGpuOnly;
    if (name == "LRU_REACTIVE_HICACHE") return Policy::LruReactiveHicache;
    if (name == "KVFLOW") return Policy::Kvflow;
    throw_error(ErrorCode::ConfigError, "unknown policy '" + name + "'");
}

void SchedulerConfig::apply_policy_defaults() {
    switch (policy) {
        case Policy::LruGpuOnly:
            eviction = EvictionPolicy::Lru;
            tier = TierMode::Discard;
            prefetch_enabled = false;
            break;
        case Policy::LruReactiveHicache:
            eviction = EvictionPolicy::Lru;
            tier = TierMode::Offload;
            prefetch_enabled = false;
            break;
        case Policy::Kvflow:
            eviction = EvictionPolicy::WorkflowAware;
            tier = TierMode::Offload;
            prefetch_enabled = true;
            break;
    }
}

void SchedulerConfig::validate() const {
    if (max_running < 1) throw_error(ErrorCode::ConfigError, "max_running must be >= 1");
    if (!(overlap_fraction >= 0.0 && overlap_fraction <= 1.0))
        throw_error(ErrorCode::ConfigError, "overlap_fraction must lie in [0, 1]");
    if (heuristic_window < 1) throw_error(ErrorCode::ConfigError, "heuristic_window must be >= 1");
    if (policy == Policy::LruGpuOnly && tier == TierMode::Offload)
        throw_error(ErrorCode::ConfigError,
                    "LRU_GPU_ONLY never loads from the backup tier; offload mode would strand KV");
}

Simulator::Simulator(const CostModel& cost, const SchedulerConfig& sched, const WorkloadSpec& workload,
                     Bytes gpu_capacity, Bytes cpu_capacity, uint64_t seed)
    : cost_(cost),
      sched_(sched),
      events_(),
      cache_(cost.bytes_per_token),
      tier_(gpu_capacity, cpu_capacity, cost_, events_),
      workload_(workload, seed) {
    cost_.validate();
    sched_.validate();
    Bytes need = cost_.kv_bytes(workload_.max_request_tokens());
    if (need > gpu_capacity) {
        std::ostringstream os;
        os << "gpu capacity " << gpu_capacity << " cannot hold the largest request footprint " << need
           << " bytes; no schedule could dispatch it";
        throw_error(ErrorCode::ConfigError, os.str());
    }
    tier_.transition_observer = [this](const CacheNode& n, NodeStatus from, NodeStatus to) {
        if (n.prefetched_unused && from == NodeStatus::InGpu &&
            (to == NodeStatus::Offloading || to == NodeStatus::BackupInCpu)) {
            wasted_prefetch_ += cache_.node_bytes(n);
        }
    };
}

SimResult Simulator::run() {
    for (RequestSpec& spec : workload_.start()) {
        uint64_t id = spec.id;
        pending_.emplace(id, std::move(spec));
        events_.push(0, EventKind::Arrival, id);
    }

    while (!events_.empty()) {
        Event e = events_.pop();
        now_ = e.time;
        switch (e.kind) {
            case EventKind::Arrival: handle_arrival(e.id); break;
            case EventKind::PrefillDone: handle_prefill_done(e.id); break;
            case EventKind::DecodeIter: handle_decode_iter(e.id); break;
            case EventKind::TransferDone:
                tier_.complete(e.id, now_);
                schedule_step(now_);
                break;
            case EventKind::WorkflowStepDone: handle_step_done(e.id); break;
        }
        if (post_event_hook) post_event_hook(now_);
    }

    if (!workload_.all_finished()) {
        std::ostringstream os;
        os << "event queue drained with unfinished workflows: " << queue_.size() << " queued, "
           << pending_.size() << " pending, " << admitted_ << " admitted";
        throw_error(ErrorCode::InternalError, os.str());
    }

    SimResult result;
    result.windows = workload_.iteration_windows();
    result.end_of_run = now_;
    for (auto& [id, r] : recs_) {
        RequestTrace t;
        t.request_id = id;
        t.client = r.spec.client;
        t.agent = r.spec.agent.name;
        t.arrival_seq = r.spec.arrival_seq;
        t.iteration = r.spec.iteration;
        t.measured = r.spec.measured;
        t.arrival = r.arrival;
        t.prefill_start = r.prefill_start;
        t.first_token = r.first_token;
        t.done = r.done;
        t.prompt_tokens = r.spec.prompt.size();
        t.matched_tokens = r.matched_tokens;
        t.loaded_tokens = r.loaded_tokens;
        t.recomputed_tokens = r.spec.prompt.size() - r.matched_tokens;
        t.fixed_tokens = r.spec.fixed_len;
        t.output_tokens = r.spec.output.size();
        t.loaded_bytes = r.loaded_bytes;
        t.stall_seconds = r.stall;
        result.makespan = std::max(result.makespan, r.done);
        result.traces.push_back(std::move(t));
    }
    for (const TransferJob& j : tier_.completed_jobs()) {
        if (j.dir == TransferDirection::HostToDevice) result.loaded_bytes += j.bytes;
        else result.offloaded_bytes += j.bytes;
    }
    result.transfers = tier_.completed_jobs();
    // Prefetched KV still resident (or arriving) that no request ever matched.
    cache_.for_each_node([&](const CacheNode& n) {
        if (n.prefetched_unused && (n.status == NodeStatus::InGpu || n.status == NodeStatus::Loading))
            wasted_prefetch_ += cache_.node_bytes(n);
    });
    result.wasted_prefetch_bytes = wasted_prefetch_;
    return result;
}

void Simulator::handle_arrival(uint64_t id) {
    auto pit = pending_.find(id);
    if (pit == pending_.end()) throw_error(ErrorCode::InternalError, "arrival for unknown request");
    Rec rec;
    rec.spec = std::move(pit->second);
    pending_.erase(pit);
    rec.arrival = now_;
    rec.busy_at_arrival = compute_.busy_integral(now_);
    auto [it, inserted] = recs_.emplace(id, std::move(rec));
    if (!inserted) throw_error(ErrorCode::InternalError, "duplicate request id");
    queue_.push_back(id);
    workload_.note_arrival(id, now_);
    if (sched_.eviction == EvictionPolicy::WorkflowAware) {
        active_steps_[id] = it->second.spec.step_metadata;
        recompute_priorities();
    }
    schedule_step(now_);
    // Proactive loads come after this arrival had its own shot at the GPU.
    if (sched_.policy == Policy::Kvflow && sched_.prefetch_enabled)
        maybe_prefetch(now_, it->second.spec.step_metadata);
}

void Simulator::schedule_step(VirtualTime now) {
    if (!compute_.idle(now)) return;
    if (!try_dispatch_prefill(now)) maybe_start_decode(now);
}

bool Simulator::try_dispatch_prefill(VirtualTime now) {
    if (queue_.empty() || admitted_ >= sched_.max_running) return false;

    if (sched_.policy == Policy::Kvflow) {
        for (size_t qi = 0; qi < queue_.size(); ++qi) {
            Rec& r = recs_.at(queue_[qi]);
            MatchResult m = cache_.peek_prefix(r.spec.prompt);
            std::vector<CacheNode*> needed = m.needed_nodes();
            bool transit = false, backed = false;
            for (CacheNode* n : needed) {
                if (n->status == NodeStatus::Loading || n->status == NodeStatus::Offloading) transit = true;
                else if (n->status == NodeStatus::BackupInCpu) backed = true;
            }
            if (transit) {  // KV already on the wire; skip past, revisit on completion
                r.state = RequestState::WaitingLoad;
                continue;
            }
            if (backed) {
                if (!issue_reactive_loads(r, needed, now)) return false;  // memory-bound: stop
                r.state = RequestState::WaitingLoad;
                continue;
            }
            return admit_and_dispatch(r, qi, now, 0.0);
        }
        return false;
    }

    // Baselines serve strictly head-of-line.
    Rec& r = recs_.at(queue_.front());
    MatchResult m = cache_.peek_prefix(r.spec.prompt);
    std::vector<CacheNode*> needed = m.needed_nodes();
    bool transit = false, backed = false;
    for (CacheNode* n : needed) {
        if (n->status == NodeStatus::Loading || n->status == NodeStatus::Offloading) transit = true;
        else if (n->status == NodeStatus::BackupInCpu) backed = true;
    }
    if (transit) return false;
    if (backed && sched_.policy == Policy::LruReactiveHicache) return gate_dispatch(r, 0, now);
    return admit_and_dispatch(r, 0, now, 0.0);
}

bool Simulator::issue_reactive_loads(Rec& r, const std::vector<CacheNode*>& needed, VirtualTime now) {
    std::vector<CacheNode*> to_load;
    Bytes total = 0;
    for (CacheNode* n : needed) {
        if (n->status == NodeStatus::BackupInCpu) {
            to_load.push_back(n);
            total += cache_.node_bytes(*n);
        }
    }
    if (!make_room(total, now, std::nullopt)) return false;
    for (CacheNode* n : to_load) {
        Bytes b = cache_.node_bytes(*n);
        tier_.begin_load(*n, now, b, TransferPurpose::Reactive, r.spec.agent);
        r.issued_nodes.insert(n->id);
        r.loaded_bytes += b;
    }
    return true;
}

bool Simulator::admit_and_dispatch(Rec& r, size_t queue_pos, VirtualTime now, double gate) {
    MatchResult m = cache_.match_prefix(r.spec.prompt, now);
    std::vector<CacheNode*> needed = m.needed_nodes();
    CacheNode* deepest = needed.empty() ? nullptr : needed.back();
    cache_.lock_root_path(deepest);
    uint64_t uncached = r.spec.prompt.size() - m.matched_tokens;
    Bytes working = cost_.kv_bytes(uncached + r.spec.output.size());
    if (!make_room(working, now, std::nullopt)) {
        cache_.unlock_root_path(deepest);
        return false;
    }
    start_prefill(r, queue_pos, now, gate, m, working);
    return true;
}

bool Simulator::gate_dispatch(Rec& r, size_t queue_pos, VirtualTime now) {
    MatchResult m = cache_.match_prefix(r.spec.prompt, now);
    std::vector<CacheNode*> needed = m.needed_nodes();
    CacheNode* deepest = needed.empty() ? nullptr : needed.back();
    cache_.lock_root_path(deepest);
    std::vector<CacheNode*> to_load;
    Bytes load_bytes = 0;
    for (CacheNode* n : needed) {
        if (n->status == NodeStatus::BackupInCpu) {
            to_load.push_back(n);
            load_bytes += cache_.node_bytes(*n);
        }
    }
    uint64_t uncached = r.spec.prompt.size() - m.matched_tokens;
    Bytes working = cost_.kv_bytes(uncached + r.spec.output.size());
    if (!make_room(load_bytes + working, now, std::nullopt)) {
        cache_.unlock_root_path(deepest);
        return false;
    }
    VirtualTime load_done = now;
    for (CacheNode* n : to_load) {
        Bytes b = cache_.node_bytes(*n);
        tier_.begin_load(*n, now, b, TransferPurpose::Reactive, r.spec.agent);
        r.issued_nodes.insert(n->id);
        r.loaded_bytes += b;
        if (auto done = tier_.load_completion_for_node(n->id)) load_done = std::max(load_done, *done);
    }
    // The load's tail that prefill progress cannot hide occupies the GPU as
    // an explicit gate before compute starts.
    double gate = std::max(0.0, (load_done - now) - sched_.overlap_fraction * cost_.prefill_time(uncached));
    start_prefill(r, queue_pos, now, gate, m, working);
    return true;
}

void Simulator::start_prefill(Rec& r, size_t queue_pos, VirtualTime now, double gate,
                              const MatchResult& m, Bytes working) {
    tier_.reserve_working(working);
    r.working_reserved = working;
    std::vector<CacheNode*> needed = m.needed_nodes();
    r.locked = needed.empty() ? nullptr : needed.back();
    r.matched_tokens = m.matched_tokens;
    r.loaded_tokens = 0;
    for (CacheNode* n : m.path) {
        if (r.issued_nodes.count(n->id)) r.loaded_tokens += n->token_count();
        n->prefetched_unused = false;
    }
    if (m.partial) {
        if (r.issued_nodes.count(m.partial->id)) r.loaded_tokens += m.partial_len;
        m.partial->prefetched_unused = false;
    }
    uint64_t uncached = r.spec.prompt.size() - m.matched_tokens;
    r.state = RequestState::RunningPrefill;
    r.prefill_start = now;
    double queued_idle =
        std::max(0.0, (now - r.arrival) - (compute_.busy_integral(now) - r.busy_at_arrival));
    r.stall = queued_idle + gate;
    double dur = gate + cost_.prefill_time(uncached);
    compute_.occupy(now, now + dur);
    events_.push(now + dur, EventKind::PrefillDone, r.spec.id);
    queue_.erase(queue_.begin() + static_cast<std::ptrdiff_t>(queue_pos));
    ++admitted_;
}

void Simulator::maybe_start_decode(VirtualTime now) {
    if (decoding_.empty()) return;
    uint64_t tag = next_batch_tag_++;
    decode_batches_[tag] = decoding_;  // membership frozen for this iteration
    double dur = cost_.decode_iter_time(decoding_.size());
    compute_.occupy(now, now + dur);
    events_.push(now + dur, EventKind::DecodeIter, tag);
}

void Simulator::handle_prefill_done(uint64_t id) {
    Rec& r = recs_.at(id);
    r.first_token = now_;
    r.decoded = r.spec.output.empty() ? 0 : 1;  // prefill emits the first token
    if (r.decoded >= r.spec.output.size()) {
        complete_request(r, now_);
    } else {
        r.state = RequestState::RunningDecode;
        decoding_.push_back(id);
    }
    schedule_step(now_);
}

void Simulator::handle_decode_iter(uint64_t tag) {
    auto bit = decode_batches_.find(tag);
    if (bit == decode_batches_.end()) throw_error(ErrorCode::InternalError, "unknown decode batch");
    std::vector<uint64_t> members = std::move(bit->second);
    decode_batches_.erase(bit);
    for (uint64_t id : members) {
        Rec& r = recs_.at(id);
        if (r.state != RequestState::RunningDecode)
            throw_error(ErrorCode::InternalError, "decode member not decoding");
        ++r.decoded;
        if (r.decoded >= r.spec.output.size()) complete_request(r, now_);
    }
    schedule_step(now_);
}

void Simulator::complete_request(Rec& r, VirtualTime now) {
    cache_.unlock_root_path(r.locked);
    r.locked = nullptr;
    TokenSeq full = r.spec.prompt;
    full.insert(full.end(), r.spec.output.begin(), r.spec.output.end());
    InsertResult ins = cache_.insert(full, now);
    tier_.convert_working(r.working_reserved, ins.new_bytes);
    r.working_reserved = 0;
    for (CacheNode* n : ins.path) n->prefetched_unused = false;
    finalize_boundary(r, full, now);
    r.done = now;
    r.state = RequestState::Done;
    workload_.note_done(r.spec.id, now);
    decoding_.erase(std::remove(decoding_.begin(), decoding_.end(), r.spec.id), decoding_.end());
    --admitted_;
    if (sched_.eviction == EvictionPolicy::WorkflowAware) {
        active_steps_.erase(r.spec.id);
        recompute_priorities();
    }
    events_.push(now, EventKind::WorkflowStepDone, r.spec.id);
}

void Simulator::finalize_boundary(Rec& r, const TokenSeq& full, VirtualTime now) {
    (void)now;
    if (sched_.boundary_mode == BoundaryMode::Explicit) {
        size_t len = std::min<size_t>(r.spec.fixed_len, full.size());
        if (len > 0) cache_.mark_fixed_boundary(r.spec.agent, full, len);
        return;
    }
    auto& hist = hit_history_[r.spec.agent];
    hist.push_back(r.matched_tokens);
    if (hist.size() < 2) return;
    size_t len = std::min(update_fixed_heuristic(hist, sched_.heuristic_window), full.size());
    if (len > 0) cache_.mark_fixed_boundary(r.spec.agent, full, len);
}

void Simulator::handle_step_done(uint64_t id) {
    for (RequestSpec& spec : workload_.on_done(id)) {
        uint64_t rid = spec.id;
        pending_.emplace(rid, std::move(spec));
        events_.push(now_, EventKind::Arrival, rid);
    }
}

bool Simulator::make_room(Bytes bytes, VirtualTime now, std::optional<int64_t> rank_floor) {
    if (tier_.free_bytes() >= bytes) return true;
    EvictRequest req;
    req.needed = bytes - tier_.free_bytes();
    req.policy = sched_.eviction;
    req.mode = sched_.tier;
    req.rank_floor_exclusive = rank_floor;
    cache_.evict(req, tier_, now);
    return tier_.free_bytes() >= bytes;
}

void Simulator::recompute_priorities() {
    StepMap merged;
    for (const auto& [id, steps] : active_steps_) {
        for (const auto& [agent, s] : steps) {
            auto it = merged.find(agent);
            if (it == merged.end() || s < it->second) merged[agent] = s;
        }
    }
    cache_.set_agent_priorities(merged);
}

void Simulator::maybe_prefetch(VirtualTime now, const StepMap& steps) {
    if (sched_.tier != TierMode::Offload) return;
    for (const AgentId& agent : next_step_agents(steps)) {
        CacheNode* b = cache_.boundary_node(agent);
        if (!b) continue;
        std::vector<CacheNode*> path;
        for (CacheNode* n = b; n && !n->is_root(); n = n->parent) path.push_back(n);
        std::reverse(path.begin(), path.end());
        for (CacheNode* n : path) {
            if (n->status != NodeStatus::BackupInCpu) continue;
            if (tier_.inflight_loads(TransferPurpose::Prefetch) >= sched_.max_concurrent_prefetch) return;
            Bytes bytes = cache_.node_bytes(*n);
            // Only displace KV strictly colder than the step-1 tier itself.
            if (!make_room(bytes, now, rank_for_step(1))) return;
            tier_.begin_load(*n, now, bytes, TransferPurpose::Prefetch, agent);
        }
    }
}

}  // namespace kvsim
