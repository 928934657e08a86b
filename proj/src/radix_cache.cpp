#include "kvsim/radix_cache.hpp"

#include <algorithm>
#include <sstream>

#include "kvsim/tier_manager.hpp"

namespace kvsim {

const char* status_name(NodeStatus s) {
    switch (s) {
        case NodeStatus::InGpu: return "IN_GPU";
        case NodeStatus::BackupInCpu: return "BACKUP_IN_CPU";
        case NodeStatus::Loading: return "LOADING";
        case NodeStatus::Offloading: return "OFFLOADING";
    }
    return "?";
}

bool is_legal_transition(NodeStatus from, NodeStatus to) {
    switch (from) {
        case NodeStatus::InGpu:
            return to == NodeStatus::Offloading || to == NodeStatus::BackupInCpu;
        case NodeStatus::Offloading:
            return to == NodeStatus::BackupInCpu;
        case NodeStatus::BackupInCpu:
            return to == NodeStatus::Loading;
        case NodeStatus::Loading:
            return to == NodeStatus::InGpu;
    }
    return false;
}

std::string rank_label(int64_t rank) {
    if (rank == kRankSuffix) return "SUFFIX";
    if (rank == kRankUnreachable) return "UNREACHABLE";
    return "STEP(" + std::to_string(rank) + ")";
}

bool CacheNode::has_device_child() const {
    for (const auto& [tok, child] : children) {
        if (child->status != NodeStatus::BackupInCpu) return true;
    }
    return false;
}

std::vector<CacheNode*> MatchResult::needed_nodes() const {
    std::vector<CacheNode*> out = path;
    if (partial != nullptr) out.push_back(partial);
    return out;
}

RadixCache::RadixCache(Bytes bytes_per_token) : bytes_per_token_(bytes_per_token) {
    root_ = std::make_unique<CacheNode>();
    root_->id = 0;
    root_->lock_count = 1;  // the root is never evictable
}

CacheNode* RadixCache::new_node(CacheNode* parent, TokenSeq key, VirtualTime now) {
    auto node = std::make_unique<CacheNode>();
    node->id = next_id_++;
    node->parent = parent;
    node->key = std::move(key);
    node->status = NodeStatus::InGpu;
    node->rank = kRankSuffix;
    node->last_access = {now, ++touch_counter_};
    CacheNode* raw = node.get();
    parent->children[raw->key.front()] = std::move(node);
    return raw;
}

void RadixCache::touch(CacheNode& n, VirtualTime now) {
    n.last_access = {now, ++touch_counter_};
    n.prefetched_unused = false;
}

namespace {

size_t common_prefix_len(const TokenSeq& key, const TokenSeq& tokens, size_t offset) {
    size_t limit = std::min(key.size(), tokens.size() - offset);
    size_t i = 0;
    while (i < limit && key[i] == tokens[offset + i]) ++i;
    return i;
}

}  // namespace

MatchResult RadixCache::match_prefix(const TokenSeq& tokens, VirtualTime now) {
    MatchResult res;
    CacheNode* cur = root_.get();
    size_t pos = 0;
    while (pos < tokens.size()) {
        auto it = cur->children.find(tokens[pos]);
        if (it == cur->children.end()) break;
        CacheNode* child = it->second.get();
        size_t l = common_prefix_len(child->key, tokens, pos);
        if (l == child->key.size()) {
            touch(*child, now);
            res.path.push_back(child);
            res.matched_tokens += l;
            pos += l;
            cur = child;
        } else {
            if (l > 0) {
                touch(*child, now);
                res.partial = child;
                res.partial_len = l;
                res.matched_tokens += l;
            }
            break;
        }
    }
    return res;
}

MatchResult RadixCache::peek_prefix(const TokenSeq& tokens) const {
    MatchResult res;
    const CacheNode* cur = root_.get();
    size_t pos = 0;
    while (pos < tokens.size()) {
        auto it = cur->children.find(tokens[pos]);
        if (it == cur->children.end()) break;
        CacheNode* child = it->second.get();
        size_t l = common_prefix_len(child->key, tokens, pos);
        if (l == child->key.size()) {
            res.path.push_back(child);
            res.matched_tokens += l;
            pos += l;
            cur = child;
        } else {
            if (l > 0) {
                res.partial = child;
                res.partial_len = l;
                res.matched_tokens += l;
            }
            break;
        }
    }
    return res;
}

CacheNode* RadixCache::split_node(CacheNode* node, size_t offset, VirtualTime now) {
    (void)now;
    // A node mid-transfer has a pending job whose byte count assumes the
    // whole segment; halving the node would corrupt the transfer's
    // accounting at completion. Schedulers never match into such nodes, so
    // reaching this is a logic error, not a user error.
    if (node->status == NodeStatus::Loading || node->status == NodeStatus::Offloading)
        throw_error(ErrorCode::InternalError, "split of a node with an in-flight transfer");
    CacheNode* parent = node->parent;
    TokenId old_first = node->key.front();

    auto upper = std::make_unique<CacheNode>();
    upper->id = next_id_++;
    upper->parent = parent;
    upper->key.assign(node->key.begin(), node->key.begin() + static_cast<long>(offset));
    // Both halves keep the original node's state: the segment was one unit,
    // so status, rank, recency, backup flag, and locks apply to both.
    upper->status = node->status;
    upper->rank = node->rank;
    upper->last_access = node->last_access;
    upper->lock_count = node->lock_count;
    upper->cpu_backed = node->cpu_backed;
    upper->prefetched_unused = node->prefetched_unused;

    // The original node keeps the tail (and its children, markers, locks),
    // so outstanding CacheNode* handles to it remain valid.
    node->key.erase(node->key.begin(), node->key.begin() + static_cast<long>(offset));

    auto self = std::move(parent->children.at(old_first));
    parent->children.erase(old_first);
    node->parent = upper.get();
    upper->children[node->key.front()] = std::move(self);
    CacheNode* upper_raw = upper.get();
    parent->children[upper_raw->key.front()] = std::move(upper);
    return upper_raw;
}

InsertResult RadixCache::insert(const TokenSeq& tokens, VirtualTime now) {
    InsertResult res;
    CacheNode* cur = root_.get();
    size_t pos = 0;
    while (pos < tokens.size()) {
        auto it = cur->children.find(tokens[pos]);
        if (it == cur->children.end()) {
            CacheNode* leaf = new_node(cur, TokenSeq(tokens.begin() + static_cast<long>(pos), tokens.end()), now);
            res.path.push_back(leaf);
            res.new_bytes += node_bytes(*leaf);
            res.new_nodes += 1;
            return res;
        }
        CacheNode* child = it->second.get();
        size_t l = common_prefix_len(child->key, tokens, pos);
        if (l < child->key.size()) {
            // Divergence (or exact end) inside this node: split so the
            // covered part ends on a node boundary.
            CacheNode* upper = split_node(child, l, now);
            touch(*upper, now);
            res.path.push_back(upper);
            pos += l;
            cur = upper;
            if (pos == tokens.size()) return res;
            // Remaining tokens diverge from the tail; fall through to create
            // a sibling leaf on the next loop turn.
        } else {
            touch(*child, now);
            res.path.push_back(child);
            pos += l;
            cur = child;
        }
    }
    return res;
}

void RadixCache::lock_root_path(CacheNode* deepest) {
    for (CacheNode* n = deepest; n != nullptr && !n->is_root(); n = n->parent) n->lock_count += 1;
}

void RadixCache::unlock_root_path(CacheNode* deepest) {
    for (CacheNode* n = deepest; n != nullptr && !n->is_root(); n = n->parent) {
        if (n->lock_count <= 0) throw_error(ErrorCode::UnderflowUnlock, "unlock below zero on node " + std::to_string(n->id));
        n->lock_count -= 1;
    }
}

CacheNode* RadixCache::mark_fixed_boundary(const AgentId& agent, const TokenSeq& tokens, size_t fixed_len) {
    if (fixed_len == 0) throw_error(ErrorCode::BoundaryBeyondCache, "fixed_len must be > 0");
    CacheNode* cur = root_.get();
    size_t pos = 0;
    CacheNode* target = nullptr;
    while (pos < fixed_len) {
        auto it = cur->children.find(tokens[pos]);
        if (it == cur->children.end())
            throw_error(ErrorCode::BoundaryBeyondCache, "cache covers only " + std::to_string(pos) + " of " + std::to_string(fixed_len) + " fixed tokens");
        CacheNode* child = it->second.get();
        size_t l = common_prefix_len(child->key, tokens, pos);
        if (pos + l < fixed_len) {
            if (l < child->key.size())
                throw_error(ErrorCode::BoundaryBeyondCache, "cache covers only " + std::to_string(pos + l) + " of " + std::to_string(fixed_len) + " fixed tokens");
            pos += l;
            cur = child;
            continue;
        }
        size_t within = fixed_len - pos;  // 1..key length
        if (within < child->key.size()) {
            target = split_node(child, within, 0);
        } else {
            target = child;
        }
        pos = fixed_len;
    }
    if (target == nullptr) throw_error(ErrorCode::BoundaryBeyondCache, "empty boundary walk");

    auto old = boundaries_.find(agent);
    if (old != boundaries_.end() && old->second != target) old->second->fixed_boundary_for.erase(agent);
    target->fixed_boundary_for.insert(agent);
    boundaries_[agent] = target;
    return target;
}

CacheNode* RadixCache::boundary_node(const AgentId& agent) const {
    auto it = boundaries_.find(agent);
    return it == boundaries_.end() ? nullptr : it->second;
}

void RadixCache::set_agent_priorities(const StepMap& steps) {
    // Pass 1: everything is a suffix until a boundary path says otherwise.
    std::vector<CacheNode*> stack;
    for (auto& [tok, child] : root_->children) stack.push_back(child.get());
    while (!stack.empty()) {
        CacheNode* n = stack.back();
        stack.pop_back();
        n->rank = kRankSuffix;
        for (auto& [tok, child] : n->children) stack.push_back(child.get());
    }
    // Pass 2: each agent's step value applies along its boundary root path;
    // shared nodes keep the minimum (least evictable wins).
    for (const auto& [agent, node] : boundaries_) {
        auto it = steps.find(agent);
        int64_t candidate = rank_for_step(it == steps.end() ? kStepUnreachable : it->second);
        for (CacheNode* n = node; n != nullptr && !n->is_root(); n = n->parent) {
            n->rank = std::min(n->rank, candidate);
        }
    }
}

void RadixCache::drop_boundary_markers(CacheNode* node) {
    for (const AgentId& a : node->fixed_boundary_for) {
        auto it = boundaries_.find(a);
        if (it != boundaries_.end() && it->second == node) boundaries_.erase(it);
    }
    node->fixed_boundary_for.clear();
}

void RadixCache::remove_node(CacheNode* node) {
    if (node->is_root()) throw_error(ErrorCode::InternalError, "cannot remove root");
    if (!node->children.empty()) throw_error(ErrorCode::InternalError, "removing node with children");
    drop_boundary_markers(node);
    node->parent->children.erase(node->key.front());
}

EvictOutcome RadixCache::evict(const EvictRequest& req, TierManager& tier, VirtualTime now) {
    EvictOutcome out;

    auto evictable = [&](CacheNode* n) {
        if (n->is_root()) return false;
        if (n->lock_count != 0) return false;
        if (n->status != NodeStatus::InGpu) return false;
        if (n->has_device_child()) return false;
        if (req.rank_floor_exclusive && n->rank <= *req.rank_floor_exclusive) return false;
        return true;
    };

    // Order: WORKFLOW_AWARE takes the most evictable rank first, ties (and
    // plain LRU) by oldest access; ids make the order total.
    auto before = [&](CacheNode* a, CacheNode* b) {
        if (req.policy == EvictionPolicy::WorkflowAware && a->rank != b->rank) return a->rank > b->rank;
        if (a->last_access.time != b->last_access.time) return a->last_access.time < b->last_access.time;
        if (a->last_access.seq != b->last_access.seq) return a->last_access.seq < b->last_access.seq;
        return a->id < b->id;
    };

    std::vector<CacheNode*> heap;
    std::vector<CacheNode*> stack;
    for (auto& [tok, child] : root_->children) stack.push_back(child.get());
    while (!stack.empty()) {
        CacheNode* n = stack.back();
        stack.pop_back();
        if (evictable(n)) heap.push_back(n);
        for (auto& [tok, child] : n->children) stack.push_back(child.get());
    }
    auto heap_cmp = [&](CacheNode* a, CacheNode* b) { return before(b, a); };  // min-heap on `before`
    std::make_heap(heap.begin(), heap.end(), heap_cmp);

    while (out.immediate_freed + out.pending_freed < req.needed && !heap.empty()) {
        std::pop_heap(heap.begin(), heap.end(), heap_cmp);
        CacheNode* victim = heap.back();
        heap.pop_back();
        if (!evictable(victim)) continue;  // stale entry (parent got re-pushed twice, etc.)

        const Bytes bytes = node_bytes(*victim);
        const uint64_t victim_id = victim->id;
        CacheNode* parent = victim->parent;
        if (req.mode == TierMode::Discard) {
            tier.discard_release(*victim, bytes);
            remove_node(victim);  // frees the node
            out.victims.push_back({victim_id, bytes, true});
            out.immediate_freed += bytes;
        } else if (victim->cpu_backed) {
            tier.discard_to_backup(*victim, now, bytes);
            out.victims.push_back({victim_id, bytes, true});
            out.immediate_freed += bytes;
        } else if (!tier.cpu_has_room(bytes)) {
            // CPU store full: fall back to dropping the GPU copy outright.
            tier.discard_release(*victim, bytes);
            remove_node(victim);  // frees the node
            out.victims.push_back({victim_id, bytes, true});
            out.immediate_freed += bytes;
        } else {
            tier.begin_offload(*victim, now, bytes);
            out.victims.push_back({victim_id, bytes, false});
            out.pending_freed += bytes;
        }

        if (parent != nullptr && evictable(parent)) {
            heap.push_back(parent);
            std::push_heap(heap.begin(), heap.end(), heap_cmp);
        }
    }
    out.sufficient = out.immediate_freed + out.pending_freed >= req.needed;
    return out;
}

std::string RadixCache::dump() const {
    std::ostringstream os;
    struct Frame {
        const CacheNode* node;
        int depth;
    };
    std::vector<Frame> stack;
    os << "root\n";
    // push in reverse key order so the smallest first-token pops first
    for (auto it = root_->children.rbegin(); it != root_->children.rend(); ++it)
        stack.push_back({it->second.get(), 1});
    while (!stack.empty()) {
        Frame f = stack.back();
        stack.pop_back();
        const CacheNode& n = *f.node;
        for (int i = 0; i < f.depth; ++i) os << "  ";
        os << "[" << n.key.front();
        if (n.key.size() > 1) os << "..+" << n.key.size() - 1;
        os << "] " << status_name(n.status) << " " << rank_label(n.rank) << " lock=" << n.lock_count
           << (n.cpu_backed ? " backed" : "");
        if (!n.fixed_boundary_for.empty()) {
            os << " boundary{";
            bool first = true;
            for (const auto& a : n.fixed_boundary_for) {
                if (!first) os << ",";
                os << "c" << a.client << "/" << a.name;
                first = false;
            }
            os << "}";
        }
        os << "\n";
        for (auto it = n.children.rbegin(); it != n.children.rend(); ++it)
            stack.push_back({it->second.get(), f.depth + 1});
    }
    return os.str();
}

size_t RadixCache::node_count() const {
    size_t n = 0;
    for_each_node([&](const CacheNode&) { ++n; });
    return n;
}

Bytes RadixCache::gpu_resident_bytes() const {
    Bytes total = 0;
    for_each_node([&](const CacheNode& n) {
        if (n.status == NodeStatus::InGpu || n.status == NodeStatus::Offloading) total += node_bytes(n);
    });
    return total;
}

size_t update_fixed_heuristic(const std::vector<size_t>& hit_lengths, size_t window) {
    if (hit_lengths.size() < 2)
        throw_error(ErrorCode::InsufficientHistory, "need at least 2 hit-length samples, have " + std::to_string(hit_lengths.size()));
    if (window == 0) throw_error(ErrorCode::ConfigError, "window must be > 0");
    size_t take = std::min(window, hit_lengths.size());
    size_t best = hit_lengths[hit_lengths.size() - take];
    for (size_t i = hit_lengths.size() - take; i < hit_lengths.size(); ++i) best = std::min(best, hit_lengths[i]);
    return best;
}

}  // namespace kvsim
