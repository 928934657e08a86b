#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <deque>
#include <random>
#include <vector>

#include "kvsim/step_graph.hpp"

using namespace kvsim;

namespace {

AgentId ag(const std::string& name, ClientId client = 0) { return AgentId{client, name}; }

GraphNode node(const std::string& name, AggregationKind kind = AggregationKind::MaxPlusOne) {
    return GraphNode{ag(name), kind};
}

StepGraph chain(int n) {
    std::vector<GraphNode> nodes;
    std::vector<GraphEdge> edges;
    for (int i = 0; i < n; ++i) nodes.push_back(node("n" + std::to_string(i)));
    for (int i = 0; i + 1 < n; ++i) edges.push_back({nodes[i].id, nodes[i + 1].id});
    return StepGraph::build(nodes, edges);
}

StepGraph ring(int n) {
    std::vector<GraphNode> nodes;
    std::vector<GraphEdge> edges;
    for (int i = 0; i < n; ++i) nodes.push_back(node("n" + std::to_string(i)));
    for (int i = 0; i < n; ++i) edges.push_back({nodes[i].id, nodes[(i + 1) % n].id});
    return StepGraph::build(nodes, edges);
}

// Independent reference for acyclic graphs: one dynamic-programming pass in
// topological order (no fixpoint iteration involved).
std::vector<StepValue> dag_reference(int n, const std::vector<std::vector<int>>& preds,
                                     const std::vector<AggregationKind>& kinds,
                                     const std::vector<bool>& active) {
    std::vector<std::vector<int>> succs(n);
    std::vector<int> indeg(n, 0);
    for (int v = 0; v < n; ++v)
        for (int p : preds[v]) {
            succs[p].push_back(v);
            ++indeg[v];
        }
    std::deque<int> ready;
    for (int v = 0; v < n; ++v)
        if (indeg[v] == 0) ready.push_back(v);
    std::vector<int> order;
    while (!ready.empty()) {
        int v = ready.front();
        ready.pop_front();
        order.push_back(v);
        for (int s : succs[v])
            if (--indeg[s] == 0) ready.push_back(s);
    }
    REQUIRE(static_cast<int>(order.size()) == n);  // acyclic by construction

    std::vector<StepValue> val(n, kStepUnreachable);
    for (int v : order) {
        if (active[v]) {
            val[v] = 0;
            continue;
        }
        StepValue best = kStepUnreachable;
        bool any = false;
        for (int p : preds[v]) {
            if (val[p] == kStepUnreachable) continue;
            if (!any) {
                best = val[p];
                any = true;
            } else if (kinds[v] == AggregationKind::MinPlusOne) {
                best = std::min(best, val[p]);
            } else {
                best = std::max(best, val[p]);
            }
        }
        val[v] = any ? best + 1 : kStepUnreachable;
    }
    return val;
}

}  // namespace

TEST_CASE("four agent ring: steps count forward from the active agent") {
    std::vector<GraphNode> nodes = {node("planner"), node("executor"), node("expresser"), node("reviewer")};
    std::vector<GraphEdge> edges = {{ag("planner"), ag("executor")},
                                    {ag("executor"), ag("expresser")},
                                    {ag("expresser"), ag("reviewer")},
                                    {ag("reviewer"), ag("planner")}};
    StepGraph g = StepGraph::build(nodes, edges);

    StepMap steps = g.compute_steps({ag("executor")});
    CHECK(steps.at(ag("executor")) == 0);
    CHECK(steps.at(ag("expresser")) == 1);
    CHECK(steps.at(ag("reviewer")) == 2);
    CHECK(steps.at(ag("planner")) == 3);

    SUBCASE("two simultaneously active agents are both pinned at zero") {
        StepMap s2 = g.compute_steps({ag("executor"), ag("reviewer")});
        CHECK(s2.at(ag("executor")) == 0);
        CHECK(s2.at(ag("reviewer")) == 0);
        CHECK(s2.at(ag("expresser")) == 1);
        CHECK(s2.at(ag("planner")) == 1);
    }
}

TEST_CASE("chain graph: step equals distance from the active head") {
    StepGraph g = chain(10);
    StepMap steps = g.compute_steps({ag("n0")});
    for (int i = 0; i < 10; ++i) CHECK(steps.at(ag("n" + std::to_string(i))) == i);

    SUBCASE("activating the middle leaves upstream nodes unreachable") {
        StepMap mid = g.compute_steps({ag("n5")});
        for (int i = 0; i < 5; ++i) CHECK(mid.at(ag("n" + std::to_string(i))) == kStepUnreachable);
        for (int i = 5; i < 10; ++i) CHECK(mid.at(ag("n" + std::to_string(i))) == i - 5);
    }
}

TEST_CASE("aggregation kind: a shortcut edge dominates under MIN, the long path under MAX") {
    // a -> b -> c -> d plus a direct a -> d shortcut.
    std::vector<GraphEdge> edges = {{ag("a"), ag("b")}, {ag("b"), ag("c")}, {ag("c"), ag("d")}, {ag("a"), ag("d")}};

    std::vector<GraphNode> max_nodes = {node("a"), node("b"), node("c"), node("d")};
    CHECK(StepGraph::build(max_nodes, edges).compute_steps({ag("a")}).at(ag("d")) == 3);

    std::vector<GraphNode> min_nodes = {node("a"), node("b"), node("c"),
                                        node("d", AggregationKind::MinPlusOne)};
    CHECK(StepGraph::build(min_nodes, edges).compute_steps({ag("a")}).at(ag("d")) == 1);
}

TEST_CASE("nodes with no path from the active set stay unreachable") {
    std::vector<GraphNode> nodes = {node("a"), node("b"), node("island")};
    std::vector<GraphEdge> edges = {{ag("a"), ag("b")}};
    StepGraph g = StepGraph::build(nodes, edges);
    StepMap steps = g.compute_steps({ag("a")});
    CHECK(steps.at(ag("island")) == kStepUnreachable);
    CHECK(steps.at(ag("b")) == 1);
}

TEST_CASE("next_step_agents returns exactly the step-1 frontier, sorted") {
    StepMap steps;
    steps[ag("zeta")] = 1;
    steps[ag("alpha")] = 1;
    steps[ag("mid")] = 2;
    steps[ag("self")] = 0;
    steps[ag("gone")] = kStepUnreachable;
    std::vector<AgentId> frontier = next_step_agents(steps);
    REQUIRE(frontier.size() == 2);
    CHECK(frontier[0].name == "alpha");
    CHECK(frontier[1].name == "zeta");
}

TEST_CASE("build rejects malformed graphs") {
    std::vector<GraphNode> nodes = {node("a"), node("b")};

    SUBCASE("duplicate agent") {
        std::vector<GraphNode> dup = {node("a"), node("a")};
        CHECK_THROWS_WITH_AS(StepGraph::build(dup, {}), doctest::Contains("duplicate"), SimError);
        try {
            StepGraph::build(dup, {});
        } catch (const SimError& e) {
            CHECK(e.code() == ErrorCode::DuplicateAgent);
        }
    }
    SUBCASE("self loop") {
        try {
            StepGraph::build(nodes, {{ag("a"), ag("a")}});
            FAIL("expected throw");
        } catch (const SimError& e) {
            CHECK(e.code() == ErrorCode::SelfLoop);
        }
    }
    SUBCASE("edge endpoint not declared") {
        try {
            StepGraph::build(nodes, {{ag("a"), ag("ghost")}});
            FAIL("expected throw");
        } catch (const SimError& e) {
            CHECK(e.code() == ErrorCode::UnknownAgent);
        }
    }
    SUBCASE("repeated edges collapse to one predecessor") {
        StepGraph g = StepGraph::build(nodes, {{ag("a"), ag("b")}, {ag("a"), ag("b")}});
        CHECK(g.preds_of(1).size() == 1);
    }
}

TEST_CASE("compute_steps rejects bad active sets") {
    StepGraph g = chain(3);
    try {
        g.compute_steps({});
        FAIL("expected throw");
    } catch (const SimError& e) {
        CHECK(e.code() == ErrorCode::EmptyActiveSet);
    }
    try {
        g.compute_steps({ag("ghost")});
        FAIL("expected throw");
    } catch (const SimError& e) {
        CHECK(e.code() == ErrorCode::UnknownAgent);
    }
}

TEST_CASE("random DAGs of <= 20 nodes agree exactly with a topological-order reference") {
    std::mt19937_64 rng(20240817);
    for (int tc = 0; tc < 300; ++tc) {
        int n = 2 + static_cast<int>(rng() % 19);
        std::vector<GraphNode> nodes;
        std::vector<AggregationKind> kinds;
        for (int i = 0; i < n; ++i) {
            AggregationKind k = (rng() % 2) ? AggregationKind::MinPlusOne : AggregationKind::MaxPlusOne;
            nodes.push_back(node("n" + std::to_string(i), k));
            kinds.push_back(k);
        }
        // Edges only from lower to higher index: acyclic by construction.
        std::vector<GraphEdge> edges;
        std::vector<std::vector<int>> preds(n);
        for (int j = 1; j < n; ++j) {
            for (int i = 0; i < j; ++i) {
                if (rng() % 4 == 0) {
                    edges.push_back({nodes[i].id, nodes[j].id});
                    preds[j].push_back(i);
                }
            }
        }
        std::vector<bool> active(n, false);
        std::vector<AgentId> active_ids;
        int n_active = 1 + static_cast<int>(rng() % 3);
        for (int k = 0; k < n_active; ++k) {
            int v = static_cast<int>(rng() % n);
            if (!active[v]) {
                active[v] = true;
                active_ids.push_back(nodes[v].id);
            }
        }

        StepGraph g = StepGraph::build(nodes, edges);
        StepMap got = g.compute_steps(active_ids);
        std::vector<StepValue> want = dag_reference(n, preds, kinds, active);
        for (int v = 0; v < n; ++v) {
            INFO("case ", tc, " node ", v);
            CHECK(got.at(nodes[v].id) == want[v]);
            if (want[v] != kStepUnreachable) CHECK(want[v] <= n);  // finite steps bounded by size
        }
    }
}

TEST_CASE("single directed cycles of <= 20 nodes match the rotation closed form") {
    std::mt19937_64 rng(771);
    for (int tc = 0; tc < 100; ++tc) {
        int n = 2 + static_cast<int>(rng() % 19);
        int a = static_cast<int>(rng() % n);
        StepGraph g = ring(n);
        StepMap steps = g.compute_steps({ag("n" + std::to_string(a))});
        for (int k = 0; k < n; ++k) {
            INFO("case ", tc, " offset ", k);
            CHECK(steps.at(ag("n" + std::to_string((a + k) % n))) == k);
        }
    }
}
