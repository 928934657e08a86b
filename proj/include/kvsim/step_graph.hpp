#pragma once

#include <cstddef>
#include <vector>

#include "kvsim/errors.hpp"
#include "kvsim/types.hpp"

namespace kvsim {

// How a node combines predecessor steps: MaxPlusOne means the agent runs
// after ALL predecessors (join), MinPlusOne after ANY predecessor (branch
// merge where one path suffices).
enum class AggregationKind { MaxPlusOne, MinPlusOne };

struct GraphNode {
    AgentId id;
    AggregationKind kind = AggregationKind::MaxPlusOne;
};

struct GraphEdge {
    AgentId from;
    AgentId to;
};

// Static dependency graph over one client's agents. Cycles are allowed
// (iterative workflows close the loop); steps are computed by bounded
// synchronous relaxation so they stay well-defined on cycles.
class StepGraph {
public:
    // Validates endpoints, rejects self loops and duplicate agents, and
    // de-duplicates repeated edges.
    static StepGraph build(const std::vector<GraphNode>& nodes, const std::vector<GraphEdge>& edges);

    size_t size() const { return nodes_.size(); }
    const std::vector<GraphNode>& nodes() const { return nodes_; }
    const std::vector<int>& preds_of(size_t node_index) const { return preds_[node_index]; }
    bool contains(const AgentId& id) const;

    // Steps-to-execution for every agent given the currently active set.
    // Active agents are pinned at 0. Each round, a node with at least one
    // finite predecessor takes (min or max over finite predecessors) + 1;
    // rounds are synchronous and capped at size() so every finite value is
    // <= size() even on adversarial cyclic feedback.
    StepMap compute_steps(const std::vector<AgentId>& active) const;

private:
    std::vector<GraphNode> nodes_;
    std::vector<std::vector<int>> preds_;
};

// Agents whose step is exactly 1 (the proactive-prefetch frontier), sorted
// by (client, name) for deterministic iteration.
std::vector<AgentId> next_step_agents(const StepMap& steps);

}  // namespace kvsim
