#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "kvsim/step_graph.hpp"
#include "kvsim/types.hpp"

namespace kvsim {

enum class Topology { Sequential, Cyclic, BranchMax, BranchMin, PeerStyle };

const char* topology_name(Topology t);
Topology topology_from_name(const std::string& name);

// Log-normal length parameters for PEER_STYLE workflows (medians in tokens).
struct PeerParams {
    double fixed_median = 300;
    double dyn_median = 100;
    double out_median = 150;
    double sigma = 0.4;
    uint64_t min_len = 16;
};

struct WorkloadSpec {
    Topology topology = Topology::Sequential;
    uint32_t num_agents = 4;     // agents per workflow
    uint32_t iterations = 1;     // measured executions of the workflow
    uint32_t num_workflows = 1;  // concurrent clients, one workflow each
    uint64_t fixed_len = 1024;   // tokens, reused verbatim across invocations
    uint64_t dyn_len = 64;       // tokens, fresh per invocation
    uint64_t out_len = 64;       // generated tokens per invocation
    uint64_t shared_prefix_len = 0;  // common fixed prefix across one client's agents
    uint32_t warmup_rounds = 0;      // unmeasured sequential passes over all agents
    uint64_t vocab_size = 32000;
    PeerParams peer;

    void validate() const;
    std::string label() const;
};

// One released agent invocation, ready for the scheduler.
struct RequestSpec {
    uint64_t id = 0;  // client * 1e6 + per-client release counter: policy-independent
    ClientId client = 0;
    AgentId agent;
    TokenSeq prompt;      // fixed part followed by the dynamic part
    size_t fixed_len = 0;
    TokenSeq output;      // pre-drawn generated tokens, inserted at completion
    StepMap step_metadata;  // steps-to-execution with this agent active
    bool measured = false;
    uint64_t arrival_seq = 0;  // per-client release index
    uint32_t iteration = 0;    // pass index including warmup passes
};

// Per-(client, iteration) completion window for workflow-latency metrics.
struct IterationWindow {
    ClientId client = 0;
    uint32_t iteration = 0;
    bool measured = false;
    VirtualTime start = -1;
    VirtualTime end = -1;
};

// Closed-loop request source: requests are released when their workflow
// predecessors complete. Release ORDER per client is a pure function of the
// spec and seed (policy-independent); release times are whatever the
// simulation makes them.
class WorkloadController {
public:
    WorkloadController(const WorkloadSpec& spec, uint64_t seed);

    // First release of every client (the simulator schedules them at t=0).
    std::vector<RequestSpec> start();
    // Releases unblocked by this completion.
    std::vector<RequestSpec> on_done(uint64_t request_id);

    bool client_finished(ClientId client) const;
    bool all_finished() const;
    const StepGraph& graph(ClientId client) const;
    const WorkloadSpec& spec() const { return spec_; }

    // Largest prompt-plus-output token count any request of this workload
    // can carry; used to reject GPU capacities that could never dispatch it.
    uint64_t max_request_tokens() const;

    void note_arrival(uint64_t request_id, VirtualTime t);
    void note_done(uint64_t request_id, VirtualTime t);
    std::vector<IterationWindow> iteration_windows() const;

private:
    struct AgentInfo {
        AgentId id;
        TokenSeq fixed;
        uint64_t dyn_len = 0;
        uint64_t out_len = 0;
    };

    struct ClientFlow {
        ClientId id = 0;
        std::unique_ptr<StepGraph> graph;
        std::vector<AgentInfo> agents;
        std::mt19937_64 rng;
        uint32_t total_iters = 0;   // warmup passes + measured iterations
        uint32_t warmup_iters = 0;
        uint32_t cur_iter = 0;
        std::vector<bool> done_this_iter;
        std::vector<bool> released_this_iter;
        std::vector<bool> participates;  // BranchMin skips the unchosen executor
        uint64_t next_arrival_seq = 0;
        bool finished = false;
        std::vector<IterationWindow> windows;
    };

    bool warmup_iter(const ClientFlow& f) const { return f.cur_iter < f.warmup_iters; }
    void begin_iteration(ClientFlow& f);
    RequestSpec make_request(ClientFlow& f, uint32_t agent_idx);
    std::vector<RequestSpec> release_ready(ClientFlow& f);
    // Predecessors/successors of the per-iteration execution DAG (the loop
    // back edge exists only in the step graph, not in intra-iteration deps).
    std::vector<uint32_t> iter_preds(const ClientFlow& f, uint32_t agent_idx) const;

    WorkloadSpec spec_;
    std::vector<ClientFlow> flows_;
    std::map<uint64_t, std::pair<ClientId, uint32_t>> request_agent_;  // id -> (client, agent idx)
    std::map<uint64_t, std::pair<ClientId, uint32_t>> request_iter_;   // id -> (client, iteration)
};

}  // namespace kvsim
