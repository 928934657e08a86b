#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "kvsim/errors.hpp"
#include "kvsim/types.hpp"

namespace kvsim {

class TierManager;

// Where a node's KV currently lives. LOADING/OFFLOADING are transitional and
// hold/keep GPU bytes accounted until the transfer completes.
enum class NodeStatus { InGpu, BackupInCpu, Loading, Offloading };

const char* status_name(NodeStatus s);

// The only legal moves: InGpu->Offloading->BackupInCpu->Loading->InGpu, plus
// the instant InGpu->BackupInCpu discard when a valid CPU copy already
// exists. Removal (GPU-only discard) is not a status change.
bool is_legal_transition(NodeStatus from, NodeStatus to);

// Eviction rank: larger = more evictable. Finite steps map to themselves,
// so STEP(0) < STEP(1) < ... < UNREACHABLE < SUFFIX in evictability.
inline constexpr int64_t kRankUnreachable = std::numeric_limits<int64_t>::max() / 4;
inline constexpr int64_t kRankSuffix = std::numeric_limits<int64_t>::max() / 2;

inline int64_t rank_for_step(StepValue steps) {
    return steps == kStepUnreachable ? kRankUnreachable : steps;
}
std::string rank_label(int64_t rank);

enum class EvictionPolicy { Lru, WorkflowAware };
enum class TierMode { Discard, Offload };

struct LastAccess {
    VirtualTime time = 0;
    uint64_t seq = 0;  // global touch counter; breaks equal-time ties deterministically
};

struct CacheNode {
    uint64_t id = 0;
    CacheNode* parent = nullptr;
    std::map<TokenId, std::unique_ptr<CacheNode>> children;  // keyed by first token of child key
    TokenSeq key;  // token segment this node covers

    NodeStatus status = NodeStatus::InGpu;
    int64_t rank = kRankSuffix;  // eviction rank, see above
    LastAccess last_access;
    int lock_count = 0;
    bool cpu_backed = false;        // a valid CPU copy exists (survives load-back)
    bool prefetched_unused = false; // loaded proactively, not yet matched by any request
    std::set<AgentId> fixed_boundary_for;  // agents whose fixed prompt ends exactly here

    size_t token_count() const { return key.size(); }
    bool is_root() const { return parent == nullptr; }
    // Child occupying (or about to occupy) GPU memory blocks parent eviction.
    bool has_device_child() const;
};

struct MatchResult {
    size_t matched_tokens = 0;             // full-node coverage + partial coverage
    std::vector<CacheNode*> path;          // fully matched nodes, root excluded
    CacheNode* partial = nullptr;          // node matched only up to partial_len, if any
    size_t partial_len = 0;

    // Nodes a dispatch depends on (full path plus the partially covered one).
    std::vector<CacheNode*> needed_nodes() const;
};

struct InsertResult {
    std::vector<CacheNode*> path;  // nodes exactly covering the inserted tokens
    Bytes new_bytes = 0;           // bytes of newly created nodes
    size_t new_nodes = 0;
};

struct EvictedVictim {
    uint64_t node_id = 0;
    Bytes bytes = 0;
    bool immediate = false;  // bytes free now (discard / backed discard) vs at transfer completion
};

struct EvictOutcome {
    std::vector<EvictedVictim> victims;
    Bytes immediate_freed = 0;
    Bytes pending_freed = 0;  // offloads started; bytes free when D2H completes
    bool sufficient = false;  // immediate + pending covered the request
};

struct EvictRequest {
    Bytes needed = 0;
    EvictionPolicy policy = EvictionPolicy::Lru;
    TierMode mode = TierMode::Discard;
    // Only victims strictly more evictable than this rank qualify (used by
    // proactive prefetch so a load never displaces equal-or-hotter nodes).
    std::optional<int64_t> rank_floor_exclusive;
};

// Token-segment radix tree over cached KV. Nodes stay in the tree while
// their KV lives on either tier; GPU-only mode removes them instead.
class RadixCache {
public:
    explicit RadixCache(Bytes bytes_per_token);

    Bytes bytes_per_token() const { return bytes_per_token_; }
    CacheNode& root() { return *root_; }
    const CacheNode& root() const { return *root_; }

    Bytes node_bytes(const CacheNode& n) const { return n.token_count() * bytes_per_token_; }

    // Longest cached prefix of tokens; updates last_access on every node it
    // traverses (including a partially covered one). A divergence inside a
    // node is reported as partial; splitting is deferred to insert().
    MatchResult match_prefix(const TokenSeq& tokens, VirtualTime now);

    // Lookup without touching last_access (for scheduling probes).
    MatchResult peek_prefix(const TokenSeq& tokens) const;

    // Insert tokens, splitting at divergence points; existing nodes are
    // reused, new suffix nodes start InGpu with suffix rank. The returned
    // path covers tokens exactly (the final node ends at the last token).
    InsertResult insert(const TokenSeq& tokens, VirtualTime now);

    // Pin/unpin every node from `deepest` up to (excluding) the root. Locks
    // are held as root-path walks so a split of a locked node — which
    // inserts an upper half that inherits the lock count — stays balanced
    // when the later unlock walks through both halves. nullptr is a no-op.
    void lock_root_path(CacheNode* deepest);
    void unlock_root_path(CacheNode* deepest);

    // Record that `agent`'s fixed prompt covers the first fixed_len tokens
    // of `tokens`, splitting so the boundary lands on a node end. Requires
    // the cache to already cover >= fixed_len of tokens.
    CacheNode* mark_fixed_boundary(const AgentId& agent, const TokenSeq& tokens, size_t fixed_len);
    CacheNode* boundary_node(const AgentId& agent) const;

    // Re-derive eviction ranks for the whole tree: every node defaults to
    // SUFFIX, then each agent's step value is applied along the root path of
    // its boundary node, shared nodes keeping the minimum (least evictable).
    // Agents with a boundary but no entry in steps count as UNREACHABLE.
    void set_agent_priorities(const StepMap& steps);

    // Free at least req.needed bytes following the policy order. Victims
    // must be unlocked, InGpu, and device-leaves. OFFLOAD mode transitions
    // victims through the tier (instant when cpu_backed); DISCARD removes
    // them. Never throws on shortfall: outcome.sufficient reports it.
    EvictOutcome evict(const EvictRequest& req, TierManager& tier, VirtualTime now);

    // Deterministic pre-order dump (children in first-token order).
    std::string dump() const;

    template <typename F>
    void for_each_node(F&& f) const {
        for_each_impl(*root_, f);
    }

    size_t node_count() const;  // root excluded
    Bytes gpu_resident_bytes() const;  // InGpu + Offloading nodes

private:
    friend class TierManager;

    CacheNode* new_node(CacheNode* parent, TokenSeq key, VirtualTime now);
    void touch(CacheNode& n, VirtualTime now);
    // Split: upper part becomes a fresh node holding key[0:offset); `node`
    // keeps the tail, its children, locks, and boundary markers, so stored
    // CacheNode* handles to boundary nodes stay valid.
    CacheNode* split_node(CacheNode* node, size_t offset, VirtualTime now);
    void remove_node(CacheNode* node);  // unlink a childless node
    void drop_boundary_markers(CacheNode* node);

    template <typename F>
    void for_each_impl(const CacheNode& n, F&& f) const {
        if (!n.is_root()) f(n);
        for (const auto& [tok, child] : n.children) for_each_impl(*child, f);
    }

    Bytes bytes_per_token_;
    std::unique_ptr<CacheNode> root_;
    uint64_t next_id_ = 1;
    uint64_t touch_counter_ = 0;
    std::unordered_map<AgentId, CacheNode*, AgentIdHash> boundaries_;
};

// Fixed-part length inference from recent full-hit prefix lengths: the
// minimum over the trailing `window` entries. Needs at least two samples.
size_t update_fixed_heuristic(const std::vector<size_t>& hit_lengths, size_t window = 4);

}  // namespace kvsim
