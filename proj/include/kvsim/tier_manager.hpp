#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <unordered_map>
#include <vector>

#include "kvsim/cost_model.hpp"
#include "kvsim/errors.hpp"
#include "kvsim/radix_cache.hpp"
#include "kvsim/sim_engine.hpp"
#include "kvsim/types.hpp"

namespace kvsim {

enum class TransferDirection : uint8_t { HostToDevice, DeviceToHost };
enum class TransferPurpose : uint8_t { Reactive, Prefetch, EvictionBackup };

const char* direction_name(TransferDirection d);
const char* purpose_name(TransferPurpose p);

struct TransferJob {
    uint64_t id = 0;
    TransferDirection dir = TransferDirection::HostToDevice;
    TransferPurpose purpose = TransferPurpose::Reactive;
    uint64_t node_id = 0;
    CacheNode* node = nullptr;
    Bytes bytes = 0;
    VirtualTime enqueue = 0;
    VirtualTime start = 0;     // max(enqueue, channel busy_until)
    VirtualTime complete = 0;  // start + bytes/(bw*eff) + fixed_latency
    AgentId target_agent;      // prefetch attribution, empty name otherwise
};

// GPU byte ledger. used covers InGpu+Offloading tree nodes, reserved covers
// in-flight loads, working covers admitted requests' not-yet-inserted KV.
struct GpuPool {
    Bytes capacity = 0;
    Bytes used = 0;
    Bytes reserved = 0;
    Bytes working = 0;

    Bytes committed() const { return used + reserved + working; }
    Bytes free() const { return capacity > committed() ? capacity - committed() : 0; }
};

// Two-tier memory: GPU pool + CPU backup store, connected by one full-duplex
// PCIe link modeled as two independent FIFO channels. All node status
// transitions funnel through here so legality and byte accounting stay in
// one place.
class TierManager {
public:
    TierManager(Bytes gpu_capacity, Bytes cpu_capacity, const CostModel& cost, EventQueue& events);

    const GpuPool& pool() const { return pool_; }
    Bytes free_bytes() const { return pool_.free(); }
    Bytes cpu_used() const { return cpu_used_; }
    Bytes cpu_capacity() const { return cpu_capacity_; }
    bool cpu_has_room(Bytes bytes) const { return cpu_capacity_ == 0 || cpu_used_ + bytes <= cpu_capacity_; }

    // InGpu -> Offloading; enqueues a D2H job; GPU bytes stay accounted
    // until completion.
    uint64_t begin_offload(CacheNode& node, VirtualTime now, Bytes bytes);

    // BackupInCpu -> Loading; reserves GPU bytes; enqueues an H2D job.
    uint64_t begin_load(CacheNode& node, VirtualTime now, Bytes bytes, TransferPurpose purpose,
                        const AgentId& target = AgentId{});

    // Instant InGpu -> BackupInCpu for nodes with a valid CPU copy: the GPU
    // copy is dropped with no transfer.
    void discard_to_backup(CacheNode& node, VirtualTime now, Bytes bytes);

    // GPU-only eviction accounting for a node the cache is about to remove.
    void discard_release(CacheNode& node, Bytes bytes);

    // Apply a TransferDone event; returns the finished job record.
    const TransferJob& complete(uint64_t job_id, VirtualTime now);

    // Working-set accounting for admitted requests.
    void reserve_working(Bytes bytes);
    void convert_working(Bytes reserved_bytes, Bytes inserted_bytes);

    VirtualTime channel_busy_until(TransferDirection d) const { return busy_until_[static_cast<int>(d)]; }
    std::optional<VirtualTime> load_completion_for_node(uint64_t node_id) const;
    size_t inflight_count() const { return active_.size(); }
    size_t inflight_loads(TransferPurpose purpose) const;
    Bytes inflight_load_bytes() const;
    const std::vector<TransferJob>& completed_jobs() const { return completed_; }

    // Called on every status transition (after validation); used by audits.
    std::function<void(const CacheNode&, NodeStatus, NodeStatus)> transition_observer;

    // Cross-checks the pool ledger against the tree; throws on any mismatch.
    void audit(const RadixCache& cache) const;

private:
    friend class RadixCache;
    void set_status(CacheNode& node, NodeStatus to);
    uint64_t enqueue_job(TransferJob job);

    GpuPool pool_;
    Bytes cpu_capacity_ = 0;  // 0 = unbounded
    Bytes cpu_used_ = 0;
    CostModel cost_;
    EventQueue& events_;
    VirtualTime busy_until_[2] = {0, 0};
    uint64_t next_job_id_ = 1;
    std::unordered_map<uint64_t, TransferJob> active_;
    std::unordered_map<uint64_t, uint64_t> loading_job_by_node_;
    std::vector<TransferJob> completed_;
};

}  // namespace kvsim
