#include "kvsim/tier_manager.hpp"

#include <string>

namespace kvsim {

const char* direction_name(TransferDirection d) {
    return d == TransferDirection::HostToDevice ? "H2D" : "D2H";
}

const char* purpose_name(TransferPurpose p) {
    switch (p) {
        case TransferPurpose::Reactive: return "reactive";
        case TransferPurpose::Prefetch: return "prefetch";
        case TransferPurpose::EvictionBackup: return "eviction_backup";
    }
    return "?";
}

TierManager::TierManager(Bytes gpu_capacity, Bytes cpu_capacity, const CostModel& cost, EventQueue& events)
    : cpu_capacity_(cpu_capacity), cost_(cost), events_(events) {
    pool_.capacity = gpu_capacity;
}

void TierManager::set_status(CacheNode& node, NodeStatus to) {
    if (!is_legal_transition(node.status, to)) {
        throw_error(ErrorCode::IllegalState, std::string("illegal transition ") + status_name(node.status) + " -> " +
                                                 status_name(to) + " on node " + std::to_string(node.id));
    }
    NodeStatus from = node.status;
    node.status = to;
    if (transition_observer) transition_observer(node, from, to);
}

uint64_t TierManager::enqueue_job(TransferJob job) {
    const int ch = static_cast<int>(job.dir);
    const double bw = job.dir == TransferDirection::HostToDevice ? cost_.h2d_bandwidth : cost_.d2h_bandwidth;
    job.id = next_job_id_++;
    job.start = std::max(job.enqueue, busy_until_[ch]);
    job.complete = job.start + cost_.transfer_seconds(job.bytes, bw);
    busy_until_[ch] = job.complete;
    events_.push(job.complete, EventKind::TransferDone, job.id);
    uint64_t id = job.id;
    active_.emplace(id, job);
    return id;
}

uint64_t TierManager::begin_offload(CacheNode& node, VirtualTime now, Bytes bytes) {
    if (node.lock_count != 0) throw_error(ErrorCode::IllegalState, "offloading a locked node");
    set_status(node, NodeStatus::Offloading);  // validates InGpu origin
    TransferJob job;
    job.dir = TransferDirection::DeviceToHost;
    job.purpose = TransferPurpose::EvictionBackup;
    job.node_id = node.id;
    job.node = &node;
    job.bytes = bytes;
    job.enqueue = now;
    return enqueue_job(job);
}

uint64_t TierManager::begin_load(CacheNode& node, VirtualTime now, Bytes bytes, TransferPurpose purpose, const AgentId& target) {
    if (pool_.free() < bytes)
        throw_error(ErrorCode::OutOfGpuMemory, "load of " + std::to_string(bytes) + " bytes exceeds free " + std::to_string(pool_.free()));
    set_status(node, NodeStatus::Loading);  // validates BackupInCpu origin
    pool_.reserved += bytes;
    TransferJob job;
    job.dir = TransferDirection::HostToDevice;
    job.purpose = purpose;
    job.node_id = node.id;
    job.node = &node;
    job.bytes = bytes;
    job.enqueue = now;
    job.target_agent = target;
    uint64_t id = enqueue_job(std::move(job));
    loading_job_by_node_[node.id] = id;
    return id;
}

void TierManager::discard_to_backup(CacheNode& node, VirtualTime now, Bytes bytes) {
    (void)now;
    if (!node.cpu_backed) throw_error(ErrorCode::IllegalState, "discard_to_backup without a CPU copy");
    if (node.lock_count != 0) throw_error(ErrorCode::IllegalState, "discarding a locked node");
    set_status(node, NodeStatus::BackupInCpu);  // validates InGpu origin
    if (pool_.used < bytes) throw_error(ErrorCode::InternalError, "pool.used underflow");
    pool_.used -= bytes;
}

void TierManager::discard_release(CacheNode& node, Bytes bytes) {
    if (node.status != NodeStatus::InGpu) throw_error(ErrorCode::IllegalState, "discarding a non-resident node");
    if (node.lock_count != 0) throw_error(ErrorCode::IllegalState, "discarding a locked node");
    if (pool_.used < bytes) throw_error(ErrorCode::InternalError, "pool.used underflow");
    pool_.used -= bytes;
}

const TransferJob& TierManager::complete(uint64_t job_id, VirtualTime now) {
    auto it = active_.find(job_id);
    if (it == active_.end()) throw_error(ErrorCode::InternalError, "completing unknown transfer " + std::to_string(job_id));
    TransferJob job = it->second;
    active_.erase(it);
    if (job.complete > now + 1e-12 || job.complete < now - 1e-12)
        throw_error(ErrorCode::InternalError, "transfer completion time drifted");

    CacheNode& node = *job.node;
    if (job.dir == TransferDirection::DeviceToHost) {
        set_status(node, NodeStatus::BackupInCpu);
        if (pool_.used < job.bytes) throw_error(ErrorCode::InternalError, "pool.used underflow");
        pool_.used -= job.bytes;
        if (!node.cpu_backed) {
            node.cpu_backed = true;
            cpu_used_ += job.bytes;
        }
    } else {
        set_status(node, NodeStatus::InGpu);
        if (pool_.reserved < job.bytes) throw_error(ErrorCode::InternalError, "pool.reserved underflow");
        pool_.reserved -= job.bytes;
        pool_.used += job.bytes;
        // The CPU copy is retained (write-once per content): the next
        // eviction of this node is an instant discard.
        loading_job_by_node_.erase(job.node_id);
        if (job.purpose == TransferPurpose::Prefetch) node.prefetched_unused = true;
    }
    completed_.push_back(job);
    return completed_.back();
}

void TierManager::reserve_working(Bytes bytes) {
    if (pool_.free() < bytes) throw_error(ErrorCode::OutOfGpuMemory, "working reservation exceeds free bytes");
    pool_.working += bytes;
}

void TierManager::convert_working(Bytes reserved_bytes, Bytes inserted_bytes) {
    if (pool_.working < reserved_bytes) throw_error(ErrorCode::InternalError, "pool.working underflow");
    if (inserted_bytes > reserved_bytes) throw_error(ErrorCode::InternalError, "inserted more bytes than reserved");
    pool_.working -= reserved_bytes;
    pool_.used += inserted_bytes;
}

std::optional<VirtualTime> TierManager::load_completion_for_node(uint64_t node_id) const {
    auto it = loading_job_by_node_.find(node_id);
    if (it == loading_job_by_node_.end()) return std::nullopt;
    return active_.at(it->second).complete;
}

size_t TierManager::inflight_loads(TransferPurpose purpose) const {
    size_t count = 0;
    for (const auto& [id, job] : active_)
        if (job.dir == TransferDirection::HostToDevice && job.purpose == purpose) count += 1;
    return count;
}

Bytes TierManager::inflight_load_bytes() const {
    Bytes total = 0;
    for (const auto& [id, job] : active_)
        if (job.dir == TransferDirection::HostToDevice) total += job.bytes;
    return total;
}

void TierManager::audit(const RadixCache& cache) const {
    Bytes gpu = 0, loading = 0;
    cache.for_each_node([&](const CacheNode& n) {
        Bytes b = cache.node_bytes(n);
        if (n.status == NodeStatus::InGpu || n.status == NodeStatus::Offloading) gpu += b;
        if (n.status == NodeStatus::Loading) loading += b;
    });
    if (gpu != pool_.used)
        throw_error(ErrorCode::InternalError, "audit: tree GPU bytes " + std::to_string(gpu) + " != pool.used " + std::to_string(pool_.used));
    if (loading != pool_.reserved)
        throw_error(ErrorCode::InternalError, "audit: tree LOADING bytes " + std::to_string(loading) + " != pool.reserved " + std::to_string(pool_.reserved));
    if (pool_.committed() > pool_.capacity)
        throw_error(ErrorCode::InternalError, "audit: committed " + std::to_string(pool_.committed()) + " exceeds capacity " + std::to_string(pool_.capacity));
}

}  // namespace kvsim
