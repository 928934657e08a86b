#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "kvsim/cost_model.hpp"
#include "kvsim/metrics.hpp"
#include "kvsim/radix_cache.hpp"
#include "kvsim/sim_engine.hpp"
#include "kvsim/step_graph.hpp"
#include "kvsim/tier_manager.hpp"
#include "kvsim/types.hpp"
#include "kvsim/workload.hpp"

namespace kvsim {

// LRU_GPU_ONLY: single-tier radix cache, LRU eviction discards outright.
// LRU_REACTIVE_HICACHE: two tiers; evictions back up to CPU; a dispatch
//   needing CPU-resident nodes loads them reactively, paying a stall gate
//   that occupies the GPU (residual load time minus a pipelining credit).
// KVFLOW: two tiers, workflow-aware eviction ranks, proactive prefetch of
//   step-1 agents, and status-aware skipping of load-blocked requests.
enum class Policy { LruGpuOnly, LruReactiveHicache, Kvflow };

const char* policy_name(Policy p);
Policy policy_from_name(const std::string& name);

enum class BoundaryMode { Explicit, Heuristic };

struct SchedulerConfig {
    Policy policy = Policy::Kvflow;
    uint32_t max_running = 8;             // admitted (prefill or decode) requests
    uint32_t max_concurrent_prefetch = 2; // in-flight prefetch transfer jobs
    bool prefetch_enabled = true;         // only effective under KVFLOW
    double overlap_fraction = 0.5;        // reactive-load pipelining credit
    BoundaryMode boundary_mode = BoundaryMode::Explicit;
    size_t heuristic_window = 4;

    // Derived from `policy` by apply_policy_defaults(); configs may override.
    EvictionPolicy eviction = EvictionPolicy::WorkflowAware;
    TierMode tier = TierMode::Offload;

    void apply_policy_defaults();
    void validate() const;
};

enum class RequestState { Queued, WaitingLoad, RunningPrefill, RunningDecode, Done };

struct SimResult {
    std::vector<RequestTrace> traces;  // request-id order
    std::vector<IterationWindow> windows;
    std::vector<TransferJob> transfers;
    VirtualTime makespan = 0;          // last request completion
    VirtualTime end_of_run = 0;        // last event (includes trailing transfers)
    Bytes loaded_bytes = 0;            // completed H2D volume
    Bytes offloaded_bytes = 0;         // completed D2H volume
    Bytes wasted_prefetch_bytes = 0;   // prefetched, displaced or run-ended unused
};

// Single-GPU discrete-event simulation: one compute stream (a prefill op or
// a batched decode iteration at a time, prefill first), a two-tier cache,
// and a closed-loop workload whose releases follow workflow dependencies.
class Simulator {
public:
    Simulator(const CostModel& cost, const SchedulerConfig& sched, const WorkloadSpec& workload,
              Bytes gpu_capacity, Bytes cpu_capacity, uint64_t seed);

    SimResult run();

    // Introspection for tests; valid during and after run().
    RadixCache& cache() { return cache_; }
    TierManager& tier() { return tier_; }
    const WorkloadController& workload() const { return workload_; }
    const ComputeClock& compute() const { return compute_; }

    // Invoked after every processed event (tests hang audits here).
    std::function<void(VirtualTime)> post_event_hook;

private:
    struct Rec {
        RequestSpec spec;
        RequestState state = RequestState::Queued;
        VirtualTime arrival = 0;
        double busy_at_arrival = 0;  // compute busy-integral snapshot
        VirtualTime prefill_start = -1;
        VirtualTime first_token = -1;
        VirtualTime done = -1;
        size_t matched_tokens = 0;
        size_t loaded_tokens = 0;
        Bytes loaded_bytes = 0;
        double stall = 0;
        Bytes working_reserved = 0;
        CacheNode* locked = nullptr;
        size_t decoded = 0;
        std::unordered_set<uint64_t> issued_nodes;  // ids this request's loads targeted
    };

    void handle_arrival(uint64_t id);
    void handle_prefill_done(uint64_t id);
    void handle_decode_iter(uint64_t tag);
    void handle_step_done(uint64_t id);

    void schedule_step(VirtualTime now);
    bool try_dispatch_prefill(VirtualTime now);
    bool admit_and_dispatch(Rec& r, size_t queue_pos, VirtualTime now, double gate);
    bool gate_dispatch(Rec& r, size_t queue_pos, VirtualTime now);
    void start_prefill(Rec& r, size_t queue_pos, VirtualTime now, double gate, const MatchResult& m,
                       Bytes working);
    bool issue_reactive_loads(Rec& r, const std::vector<CacheNode*>& needed, VirtualTime now);
    void maybe_start_decode(VirtualTime now);
    void complete_request(Rec& r, VirtualTime now);
    bool make_room(Bytes bytes, VirtualTime now, std::optional<int64_t> rank_floor);
    void recompute_priorities();
    void maybe_prefetch(VirtualTime now, const StepMap& steps);
    void finalize_boundary(Rec& r, const TokenSeq& full, VirtualTime now);

    CostModel cost_;
    SchedulerConfig sched_;
    EventQueue events_;
    RadixCache cache_;
    TierManager tier_;
    WorkloadController workload_;
    ComputeClock compute_;

    VirtualTime now_ = 0;
    std::map<uint64_t, Rec> recs_;
    std::map<uint64_t, RequestSpec> pending_;  // released, arrival event in flight
    std::vector<uint64_t> queue_;              // arrival order
    std::vector<uint64_t> decoding_;
    std::unordered_map<uint64_t, std::vector<uint64_t>> decode_batches_;
    uint64_t next_batch_tag_ = 1;
    uint32_t admitted_ = 0;
    std::unordered_map<uint64_t, StepMap> active_steps_;  // request id -> metadata
    std::map<AgentId, std::vector<size_t>> hit_history_;  // heuristic boundary inference
    Bytes wasted_prefetch_ = 0;
};

}  // namespace kvsim
