#include "kvsim/step_graph.hpp"

#include <algorithm>
#include <set>
#include <unordered_map>

namespace kvsim {

namespace {

std::string agent_str(const AgentId& a) {
    return "client" + std::to_string(a.client) + "/" + a.name;
}

}  // namespace

StepGraph StepGraph::build(const std::vector<GraphNode>& nodes, const std::vector<GraphEdge>& edges) {
    StepGraph g;
    g.nodes_ = nodes;
    g.preds_.assign(nodes.size(), {});

    std::unordered_map<AgentId, int, AgentIdHash> index;
    for (size_t i = 0; i < nodes.size(); ++i) {
        auto [it, inserted] = index.emplace(nodes[i].id, static_cast<int>(i));
        if (!inserted) throw_error(ErrorCode::DuplicateAgent, "duplicate agent " + agent_str(nodes[i].id));
    }

    std::set<std::pair<int, int>> seen;  // de-duplicate repeated edges
    for (const auto& e : edges) {
        auto from = index.find(e.from);
        if (from == index.end()) throw_error(ErrorCode::UnknownAgent, "edge from unknown agent " + agent_str(e.from));
        auto to = index.find(e.to);
        if (to == index.end()) throw_error(ErrorCode::UnknownAgent, "edge to unknown agent " + agent_str(e.to));
        if (from->second == to->second) throw_error(ErrorCode::SelfLoop, "self loop on " + agent_str(e.from));
        if (seen.insert({from->second, to->second}).second) {
            g.preds_[to->second].push_back(from->second);
        }
    }
    return g;
}

bool StepGraph::contains(const AgentId& id) const {
    return std::any_of(nodes_.begin(), nodes_.end(), [&](const GraphNode& n) { return n.id == id; });
}

StepMap StepGraph::compute_steps(const std::vector<AgentId>& active) const {
    if (active.empty()) throw_error(ErrorCode::EmptyActiveSet, "active set is empty");

    const size_t n = nodes_.size();
    std::vector<bool> is_active(n, false);
    for (const auto& a : active) {
        bool found = false;
        for (size_t i = 0; i < n; ++i) {
            if (nodes_[i].id == a) {
                is_active[i] = true;
                found = true;
                break;
            }
        }
        if (!found) throw_error(ErrorCode::UnknownAgent, "active agent not in graph: " + agent_str(a));
    }

    std::vector<StepValue> cur(n, kStepUnreachable);
    for (size_t i = 0; i < n; ++i)
        if (is_active[i]) cur[i] = 0;

    // Synchronous relaxation: every node reads the previous round's values,
    // so the result is independent of node order. At most n rounds; each
    // round can raise the largest finite value by at most 1, which bounds
    // all finite steps by n.
    std::vector<StepValue> next(n);
    for (size_t round = 0; round < n; ++round) {
        bool changed = false;
        for (size_t i = 0; i < n; ++i) {
            if (is_active[i]) {
                next[i] = 0;
                continue;
            }
            StepValue best = kStepUnreachable;
            bool any_finite = false;
            for (int p : preds_[i]) {
                if (cur[p] == kStepUnreachable) continue;  // non-finite predecessors are ignored
                if (!any_finite) {
                    best = cur[p];
                    any_finite = true;
                } else if (nodes_[i].kind == AggregationKind::MinPlusOne) {
                    best = std::min(best, cur[p]);
                } else {
                    best = std::max(best, cur[p]);
                }
            }
            next[i] = any_finite ? best + 1 : kStepUnreachable;
            if (next[i] != cur[i]) changed = true;
        }
        cur.swap(next);
        if (!changed) break;
    }

    StepMap out;
    out.reserve(n);
    for (size_t i = 0; i < n; ++i) out.emplace(nodes_[i].id, cur[i]);
    return out;
}

std::vector<AgentId> next_step_agents(const StepMap& steps) {
    std::vector<AgentId> out;
    for (const auto& [agent, step] : steps)
        if (step == 1) out.push_back(agent);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace kvsim
