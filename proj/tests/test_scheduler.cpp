#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "kvsim/scheduler.hpp"
#include "properties.hpp"

using namespace kvsim;

namespace {

constexpr Bytes kBpt = 16;

Bytes kv(uint64_t tokens) { return tokens * kBpt; }

// Small round numbers so expected times can be written out by hand:
// prefill 10 us/token + 1 ms floor, decode 1 ms + 0.1 ms/seq, effective
// 1 GB/s in and 0.5 GB/s out, 1 ms transfer setup.
CostModel micro_cost() {
    CostModel c;
    c.name = "micro";
    c.bytes_per_token = kBpt;
    c.prefill_a = 1e-5;
    c.prefill_b = 1e-3;
    c.decode_base = 1e-3;
    c.decode_per_seq = 1e-4;
    c.h2d_bandwidth = 2e9;
    c.d2h_bandwidth = 1e9;
    c.pcie_efficiency = 0.5;
    c.fixed_latency = 1e-3;
    return c;
}

SchedulerConfig make_sched(Policy p) {
    SchedulerConfig sc;
    sc.policy = p;
    sc.apply_policy_defaults();
    return sc;
}

WorkloadSpec seq_spec(uint32_t agents, uint32_t iterations, uint32_t warmup, uint64_t fixed,
                      uint64_t dyn, uint64_t out, uint32_t workflows = 1) {
    WorkloadSpec s;
    s.topology = Topology::Sequential;
    s.num_agents = agents;
    s.iterations = iterations;
    s.warmup_rounds = warmup;
    s.fixed_len = fixed;
    s.dyn_len = dyn;
    s.out_len = out;
    s.num_workflows = workflows;
    s.vocab_size = 50000;
    return s;
}

// The prefill op occupies gate + prefill_time(uncached); anything beyond the
// pure compute time is the explicit load gate.
double gate_from_trace(const RequestTrace& t, const CostModel& cost) {
    return (t.first_token - t.prefill_start) - cost.prefill_time(t.recomputed_tokens);
}

void check_trace_shape(const SimResult& r) {
    for (const RequestTrace& t : r.traces) {
        INFO("request " << t.request_id);
        CHECK(t.prefill_start >= t.arrival);
        CHECK(t.first_token >= t.prefill_start);
        CHECK(t.done >= t.first_token);
        CHECK(t.matched_tokens + t.recomputed_tokens == t.prompt_tokens);
        CHECK(t.loaded_tokens <= t.matched_tokens);
        CHECK(t.stall_seconds >= 0);
        CHECK(r.makespan >= t.done);
    }
}

// Transfers touching one node must be strictly sequential in time.
void check_no_overlapping_node_transfers(const SimResult& r) {
    std::map<uint64_t, std::vector<const TransferJob*>> by_node;
    for (const TransferJob& j : r.transfers) by_node[j.node_id].push_back(&j);
    for (auto& [node, jobs] : by_node) {
        std::sort(jobs.begin(), jobs.end(),
                  [](const TransferJob* a, const TransferJob* b) { return a->start < b->start; });
        for (size_t i = 1; i < jobs.size(); ++i) {
            INFO("node " << node);
            CHECK(jobs[i]->start >= jobs[i - 1]->complete - 1e-12);
        }
    }
}

size_t arrival_order_inversions(const std::vector<RequestTrace>& traces) {
    size_t inversions = 0;
    for (size_t i = 0; i < traces.size(); ++i)
        for (size_t j = 0; j < traces.size(); ++j)
            if (traces[i].arrival < traces[j].arrival &&
                traces[i].prefill_start > traces[j].prefill_start)
                ++inversions;
    return inversions;
}

double measured_stall(const SimResult& r) {
    double total = 0;
    for (const RequestTrace& t : r.traces)
        if (t.measured) total += t.stall_seconds;
    return total;
}

}  // namespace

TEST_CASE("policy presets and validation") {
    SUBCASE("presets pin eviction, tier, and prefetch") {
        SchedulerConfig sc = make_sched(Policy::Kvflow);
        CHECK(sc.eviction == EvictionPolicy::WorkflowAware);
        CHECK(sc.tier == TierMode::Offload);
        CHECK(sc.prefetch_enabled);

        sc = make_sched(Policy::LruReactiveHicache);
        CHECK(sc.eviction == EvictionPolicy::Lru);
        CHECK(sc.tier == TierMode::Offload);
        CHECK_FALSE(sc.prefetch_enabled);

        sc = make_sched(Policy::LruGpuOnly);
        CHECK(sc.eviction == EvictionPolicy::Lru);
        CHECK(sc.tier == TierMode::Discard);
        CHECK_FALSE(sc.prefetch_enabled);
    }
    SUBCASE("policy names round-trip") {
        for (Policy p : {Policy::LruGpuOnly, Policy::LruReactiveHicache, Policy::Kvflow})
            CHECK(policy_from_name(policy_name(p)) == p);
        try {
            policy_from_name("BELADY");
            FAIL("expected rejection");
        } catch (const SimError& e) {
            CHECK(e.code() == ErrorCode::ConfigError);
        }
    }
    SUBCASE("a GPU-only policy cannot be paired with the backup tier") {
        SchedulerConfig sc = make_sched(Policy::LruGpuOnly);
        sc.tier = TierMode::Offload;
        try {
            sc.validate();
            FAIL("expected rejection");
        } catch (const SimError& e) {
            CHECK(e.code() == ErrorCode::ConfigError);
        }
    }
    SUBCASE("parameter ranges") {
        auto expect_config_error = [](SchedulerConfig sc) {
            try {
                sc.validate();
                FAIL_CHECK("expected rejection");
            } catch (const SimError& e) {
                CHECK(e.code() == ErrorCode::ConfigError);
            }
        };
        SchedulerConfig sc = make_sched(Policy::Kvflow);
        sc.max_running = 0;
        expect_config_error(sc);
        sc = make_sched(Policy::Kvflow);
        sc.overlap_fraction = 1.5;
        expect_config_error(sc);
        sc = make_sched(Policy::Kvflow);
        sc.overlap_fraction = -0.1;
        expect_config_error(sc);
        sc = make_sched(Policy::Kvflow);
        sc.heuristic_window = 0;
        expect_config_error(sc);
    }
    SUBCASE("a GPU too small for the largest request is rejected up front") {
        try {
            Simulator sim(micro_cost(), make_sched(Policy::Kvflow), seq_spec(2, 1, 0, 64, 8, 4),
                          kv(70), 0, 1);
            FAIL("expected rejection");
        } catch (const SimError& e) {
            CHECK(e.code() == ErrorCode::ConfigError);
        }
    }
}

TEST_CASE("single-request pipeline timings are exact") {
    // One client, two agents, ample memory: pure compute, no transfers.
    CostModel cost = micro_cost();
    Simulator sim(cost, make_sched(Policy::LruGpuOnly), seq_spec(2, 1, 0, 32, 8, 3), kv(10000), 0,
                  1);
    SimResult r = sim.run();
    REQUIRE(r.traces.size() == 2);
    check_trace_shape(r);

    const RequestTrace& a = r.traces[0];
    // 40 uncached tokens: 1 ms floor + 0.4 ms, then 2 decode iterations at
    // 1.1 ms each (the first output token rides on the prefill itself).
    CHECK(a.arrival == doctest::Approx(0.0));
    CHECK(a.prefill_start == doctest::Approx(0.0));
    CHECK(a.first_token == doctest::Approx(1.4e-3));
    CHECK(a.done == doctest::Approx(3.6e-3));
    CHECK(a.matched_tokens == 0);
    CHECK(a.recomputed_tokens == 40);
    CHECK(a.stall_seconds == doctest::Approx(0.0));

    const RequestTrace& b = r.traces[1];
    CHECK(b.arrival == doctest::Approx(3.6e-3));
    CHECK(b.first_token == doctest::Approx(5.0e-3));
    CHECK(b.done == doctest::Approx(7.2e-3));
    CHECK(r.makespan == doctest::Approx(7.2e-3));
    CHECK(r.loaded_bytes == 0);
    CHECK(r.offloaded_bytes == 0);

    REQUIRE(r.windows.size() == 1);
    CHECK(r.windows[0].end - r.windows[0].start == doctest::Approx(7.2e-3));
}

TEST_CASE("a warmed sequential workflow runs stall-free under ample memory") {
    CostModel cost = micro_cost();
    for (Policy p : {Policy::LruGpuOnly, Policy::LruReactiveHicache, Policy::Kvflow}) {
        INFO(policy_name(p));
        Simulator sim(cost, make_sched(p), seq_spec(3, 2, 1, 64, 8, 4), kv(10000), 0, 1);
        SimResult r = sim.run();
        check_trace_shape(r);
        REQUIRE(r.traces.size() == 9);
        for (const RequestTrace& t : r.traces) {
            if (!t.measured) continue;
            CHECK(t.stall_seconds == doctest::Approx(0.0));
            CHECK(t.matched_tokens == 64);  // the whole fixed part, nothing else
            CHECK(t.loaded_tokens == 0);    // and it never left the GPU
            CHECK(t.loaded_bytes == 0);
        }
        CHECK(r.loaded_bytes == 0);
        CHECK(measured_stall(r) == doctest::Approx(0.0));
    }
}

TEST_CASE("the reactive load gate follows the overlap formula") {
    // One client, two 256-token fixed prompts, memory for about 1.7 of
    // them: every returning agent finds its fixed part on the backup tier.
    CostModel cost = micro_cost();
    WorkloadSpec w = seq_spec(2, 2, 1, 256, 16, 0);
    const Bytes cap = kv(450);

    Simulator hicache(cost, make_sched(Policy::LruReactiveHicache), w, cap, 0, 1);
    SimResult hr = hicache.run();
    check_trace_shape(hr);
    check_no_overlapping_node_transfers(hr);

    size_t gated = 0;
    for (const RequestTrace& t : hr.traces) {
        INFO("request " << t.request_id);
        double gate = gate_from_trace(t, cost);
        if (t.loaded_bytes == 0) {
            CHECK(gate == doctest::Approx(0.0));
            continue;
        }
        // Loads here are single-node with an idle channel, so the exposed
        // tail is transfer time minus the hideable fraction of the prefill.
        ++gated;
        double expected =
            std::max(0.0, cost.h2d_seconds(t.loaded_bytes) - 0.5 * cost.prefill_time(t.recomputed_tokens));
        CHECK(gate == doctest::Approx(expected).epsilon(1e-9));
        CHECK(t.stall_seconds >= gate - 1e-12);  // the gate is charged as stall
        CHECK(t.matched_tokens == 256);          // the fixed part came back whole
        CHECK(t.loaded_tokens == 256);
    }
    CHECK(gated >= 2);  // both agents reload in the measured pass

    // The same pressure under the GPU-only baseline: returning agents find
    // nothing (full recompute), and nothing is ever loaded.
    SchedulerConfig gpu_only = make_sched(Policy::LruGpuOnly);
    Simulator gpuonly(cost, gpu_only, w, cap, 0, 1);
    SimResult gr = gpuonly.run();
    check_trace_shape(gr);
    CHECK(gr.loaded_bytes == 0);
    for (const RequestTrace& t : gr.traces) {
        CHECK(gate_from_trace(t, cost) == doctest::Approx(0.0));
        if (t.measured) CHECK(t.matched_tokens == 0);
    }

    // The workflow-aware policy never gates: prefill ops are pure compute.
    Simulator kvflow(cost, make_sched(Policy::Kvflow), w, cap, 0, 1);
    SimResult kr = kvflow.run();
    check_trace_shape(kr);
    check_no_overlapping_node_transfers(kr);
    for (const RequestTrace& t : kr.traces) {
        INFO("request " << t.request_id);
        CHECK(gate_from_trace(t, cost) == doctest::Approx(0.0));
    }
}

TEST_CASE("status-aware dispatch reorders around blocked requests") {
    // Two interleaved clients under pressure: heads are regularly backed or
    // in transit, so the workflow-aware scheduler should serve a clean
    // later request first at least once.
    CostModel cost = micro_cost();
    WorkloadSpec w = seq_spec(4, 2, 1, 512, 32, 16, 2);
    const Bytes cap = kv(1300);

    std::map<Policy, SimResult> results;
    for (Policy p : {Policy::LruGpuOnly, Policy::LruReactiveHicache, Policy::Kvflow}) {
        Simulator sim(cost, make_sched(p), w, cap, 0, 7);
        results.emplace(p, sim.run());
        const SimResult& r = results.at(p);
        check_trace_shape(r);
        check_no_overlapping_node_transfers(r);
    }

    // Baselines are strictly head-of-line: prefill order == arrival order.
    CHECK(arrival_order_inversions(results.at(Policy::LruGpuOnly).traces) == 0);
    CHECK(arrival_order_inversions(results.at(Policy::LruReactiveHicache).traces) == 0);
    // The status-aware queue walk actually reordered something.
    CHECK(arrival_order_inversions(results.at(Policy::Kvflow).traces) > 0);

    // Hiding loads behind other requests' compute must not lose to gating.
    CHECK(measured_stall(results.at(Policy::Kvflow)) <=
          measured_stall(results.at(Policy::LruReactiveHicache)) + 1e-9);
}

TEST_CASE("proactive prefetch hides the next agent's reload") {
    CostModel cost = micro_cost();
    WorkloadSpec w = seq_spec(3, 4, 1, 256, 16, 8);
    const Bytes cap = kv(700);

    SchedulerConfig on = make_sched(Policy::Kvflow);
    on.max_concurrent_prefetch = 1;
    Simulator with(cost, on, w, cap, 0, 3);
    SimResult rw = with.run();
    check_trace_shape(rw);
    check_no_overlapping_node_transfers(rw);

    SchedulerConfig off = make_sched(Policy::Kvflow);
    off.prefetch_enabled = false;
    Simulator without(cost, off, w, cap, 0, 3);
    SimResult ro = without.run();
    check_trace_shape(ro);

    std::vector<const TransferJob*> prefetches;
    for (const TransferJob& j : rw.transfers) {
        if (j.purpose == TransferPurpose::Prefetch) {
            prefetches.push_back(&j);
            CHECK(j.dir == TransferDirection::HostToDevice);
            CHECK_FALSE(j.target_agent.name.empty());  // attributed to the predicted agent
        } else if (j.purpose == TransferPurpose::EvictionBackup) {
            CHECK(j.target_agent.name.empty());
        }
    }
    CHECK(prefetches.size() >= 1);

    // max_concurrent_prefetch = 1: no two prefetches may be in flight at once.
    for (const TransferJob* j : prefetches)
        for (const TransferJob* k : prefetches)
            if (j != k)
                CHECK_FALSE(k->enqueue <= j->enqueue && j->enqueue < k->complete - 1e-12);

    // Disabling prefetch removes every proactive transfer.
    for (const TransferJob& j : ro.transfers) CHECK(j.purpose != TransferPurpose::Prefetch);

    // Prefetch exists to shave reload waits; it must not add stall here.
    CHECK(measured_stall(rw) <= measured_stall(ro) + 1e-9);

    // Wasted-prefetch accounting stays within what was actually prefetched.
    Bytes prefetched = 0;
    for (const TransferJob* j : prefetches) prefetched += j->bytes;
    CHECK(rw.wasted_prefetch_bytes <= prefetched);
}

TEST_CASE("heuristic boundary inference marks the stable prefix") {
    CostModel cost = micro_cost();
    SchedulerConfig sc = make_sched(Policy::Kvflow);
    sc.boundary_mode = BoundaryMode::Heuristic;
    sc.heuristic_window = 4;
    WorkloadSpec w = seq_spec(1, 4, 1, 32, 8, 0);
    Simulator sim(cost, sc, w, kv(10000), 0, 1);
    sim.run();

    CacheNode* b = sim.cache().boundary_node(AgentId{0, "a00"});
    REQUIRE(b != nullptr);
    size_t spelled = 0;
    for (const CacheNode* n = b; n != nullptr && !n->is_root(); n = n->parent)
        spelled += n->key.size();
    CHECK(spelled == 32);  // inferred boundary == the true fixed length
}

TEST_CASE("explicit boundaries let the workflow-aware policy keep fixed parts") {
    // Mini version of the cyclic reuse pattern: three agents, room for two
    // fixed parts, GPU-only tier. The recency baseline thrashes (zero
    // steady-state reuse); the workflow-aware order protects the nearest
    // next agents and misses at most once per agent per cycle.
    CostModel cost = micro_cost();
    WorkloadSpec w;
    w.topology = Topology::Cyclic;
    w.num_agents = 3;
    w.iterations = 4;
    w.warmup_rounds = 1;
    w.fixed_len = 64;
    w.dyn_len = 8;
    w.out_len = 0;
    w.num_workflows = 1;
    w.vocab_size = 50000;
    const Bytes cap = kv(64 * 2 + 40);

    SchedulerConfig wa = make_sched(Policy::LruGpuOnly);
    wa.eviction = EvictionPolicy::WorkflowAware;
    Simulator sim_wa(cost, wa, w, cap, 0, 1);
    SimResult rw = sim_wa.run();

    Simulator sim_lru(cost, make_sched(Policy::LruGpuOnly), w, cap, 0, 1);
    SimResult rl = sim_lru.run();

    uint64_t wa_hits = 0, lru_hits = 0;
    for (const RequestTrace& t : rw.traces)
        if (t.measured && t.matched_tokens >= t.fixed_tokens) ++wa_hits;
    for (const RequestTrace& t : rl.traces)
        if (t.measured && t.matched_tokens >= t.fixed_tokens) ++lru_hits;
    CHECK(lru_hits == 0);       // every return is a full miss under recency order
    CHECK(wa_hits >= 6);        // 12 measured requests, at most one miss per cycle
    CHECK(wa_hits > lru_hits);
}

TEST_CASE("every simulation keeps transitions legal and the ledger exact") {
    std::string diag;
    CHECK_MESSAGE(props::simulation_audit_property(false, 20260822, &diag) == 0, diag);
}
