#include "kvsim/workload.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "kvsim/errors.hpp"

namespace kvsim {

const char* topology_name(Topology t) {
    switch (t) {
        case Topology::Sequential: return "SEQUENTIAL";
        case Topology::Cyclic: return "CYCLIC";
        case Topology::BranchMax: return "BRANCH_MAX";
        case Topology::BranchMin: return "BRANCH_MIN";
        case Topology::PeerStyle: return "PEER_STYLE";
    }
    return "?";
}

Topology topology_from_name(const std::string& name) {
    if (name == "SEQUENTIAL") return Topology::Sequential;
    if (name == "CYCLIC") return Topology::Cyclic;
    if (name == "BRANCH_MAX") return Topology::BranchMax;
    if (name == "BRANCH_MIN") return Topology::BranchMin;
    if (name == "PEER_STYLE") return Topology::PeerStyle;
    throw_error(ErrorCode::ConfigError, "unknown topology: " + name);
}

void WorkloadSpec::validate() const {
    if (num_agents < 1) throw_error(ErrorCode::ConfigError, "num_agents must be >= 1");
    if (num_workflows < 1) throw_error(ErrorCode::ConfigError, "num_workflows must be >= 1");
    if (iterations < 1) throw_error(ErrorCode::ConfigError, "iterations must be >= 1");
    if ((topology == Topology::BranchMax || topology == Topology::BranchMin) && num_agents != 4)
        throw_error(ErrorCode::ConfigError, "branch topologies use exactly 4 agents (plan, two executors, join)");
    if (topology != Topology::PeerStyle) {
        if (fixed_len < 2) throw_error(ErrorCode::ConfigError, "fixed_len must be >= 2");
        if (shared_prefix_len > 0 && fixed_len < shared_prefix_len + 2)
            throw_error(ErrorCode::ConfigError, "fixed_len must exceed shared_prefix_len by at least 2");
    }
    // Every (client, agent) pair plus one shared-prefix slot per client gets
    // a reserved first token, which is what keeps prefixes disjoint.
    uint64_t reserved = static_cast<uint64_t>(num_workflows) * (num_agents + 1);
    if (reserved > vocab_size)
        throw_error(ErrorCode::ConfigError, "num_workflows * (num_agents+1) exceeds vocab_size");
    if (static_cast<uint64_t>(num_agents) * (warmup_rounds + iterations) * 4 >= 1000000)
        throw_error(ErrorCode::ConfigError, "request id space exhausted; reduce iterations or agents");
}

std::string WorkloadSpec::label() const {
    std::ostringstream os;
    os << topology_name(topology) << "-a" << num_agents << "-i" << iterations << "-w" << num_workflows << "-f" << fixed_len
       << "-d" << dyn_len << "-o" << out_len;
    return os.str();
}

namespace {

// Uniform token draw via modulo: bias is irrelevant here and the result is
// identical across standard library implementations (std::uniform_int_distribution is not).
TokenId rand_token(std::mt19937_64& rng, uint64_t vocab) {
    return static_cast<TokenId>(rng() % vocab);
}

// Box-Muller normal: avoids std::normal_distribution, whose exact stream is
// implementation-defined.
double rand_normal(std::mt19937_64& rng) {
    double u1 = (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    double u2 = (static_cast<double>(rng() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
}

uint64_t rand_lognormal_len(std::mt19937_64& rng, double median, double sigma, uint64_t min_len) {
    double v = median * std::exp(sigma * rand_normal(rng));
    uint64_t len = static_cast<uint64_t>(std::llround(v));
    return std::max<uint64_t>(len, min_len);
}

std::string agent_name(uint32_t idx) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "a%02u", idx);
    return buf;
}

}  // namespace

WorkloadController::WorkloadController(const WorkloadSpec& spec, uint64_t seed) : spec_(spec) {
    spec_.validate();
    const uint32_t n = spec_.num_agents;
    const bool looped = spec_.iterations > 1;

    flows_.resize(spec_.num_workflows);
    for (uint32_t c = 0; c < spec_.num_workflows; ++c) {
        ClientFlow& f = flows_[c];
        f.id = c;
        std::seed_seq sq{seed, static_cast<uint64_t>(c), uint64_t{0x9e3779b9}};
        f.rng.seed(sq);
        f.warmup_iters = spec_.warmup_rounds;
        f.total_iters = spec_.warmup_rounds + spec_.iterations;

        // Reserved first tokens: slots [c*(n+1), c*(n+1)+n) for agents, slot
        // c*(n+1)+n for the client's shared prefix block.
        const uint64_t base = static_cast<uint64_t>(c) * (n + 1);

        TokenSeq shared;
        if (spec_.shared_prefix_len > 0) {
            shared.push_back(static_cast<TokenId>(base + n));
            for (uint64_t i = 1; i < spec_.shared_prefix_len; ++i) shared.push_back(rand_token(f.rng, spec_.vocab_size));
        }

        f.agents.resize(n);
        for (uint32_t a = 0; a < n; ++a) {
            AgentInfo& info = f.agents[a];
            info.id = AgentId{c, agent_name(a)};
            uint64_t fixed_len = spec_.fixed_len;
            info.dyn_len = spec_.dyn_len;
            info.out_len = spec_.out_len;
            if (spec_.topology == Topology::PeerStyle) {
                fixed_len = std::max<uint64_t>(rand_lognormal_len(f.rng, spec_.peer.fixed_median, spec_.peer.sigma, spec_.peer.min_len),
                                               spec_.shared_prefix_len + 2);
                info.dyn_len = rand_lognormal_len(f.rng, spec_.peer.dyn_median, spec_.peer.sigma, spec_.peer.min_len);
                info.out_len = rand_lognormal_len(f.rng, spec_.peer.out_median, spec_.peer.sigma, spec_.peer.min_len);
            }
            info.fixed = shared;
            info.fixed.push_back(static_cast<TokenId>(base + a));
            while (info.fixed.size() < fixed_len) info.fixed.push_back(rand_token(f.rng, spec_.vocab_size));
        }

        // Step graph: a chain (or the branch diamond), closed into a loop
        // when the workflow iterates, so the last agent's successor is the
        // first agent of the next pass.
        std::vector<GraphNode> nodes;
        std::vector<GraphEdge> edges;
        const bool branch = spec_.topology == Topology::BranchMax || spec_.topology == Topology::BranchMin;
        for (uint32_t a = 0; a < n; ++a) {
            AggregationKind kind = AggregationKind::MaxPlusOne;
            if (branch && a == 3) kind = spec_.topology == Topology::BranchMax ? AggregationKind::MaxPlusOne : AggregationKind::MinPlusOne;
            nodes.push_back({f.agents[a].id, kind});
        }
        if (branch) {
            edges.push_back({f.agents[0].id, f.agents[1].id});
            edges.push_back({f.agents[0].id, f.agents[2].id});
            edges.push_back({f.agents[1].id, f.agents[3].id});
            edges.push_back({f.agents[2].id, f.agents[3].id});
            if (looped) edges.push_back({f.agents[3].id, f.agents[0].id});
        } else {
            for (uint32_t a = 0; a + 1 < n; ++a) edges.push_back({f.agents[a].id, f.agents[a + 1].id});
            if (looped && n > 1) edges.push_back({f.agents[n - 1].id, f.agents[0].id});
        }
        f.graph = std::make_unique<StepGraph>(StepGraph::build(nodes, edges));

        begin_iteration(f);
    }
}

std::vector<uint32_t> WorkloadController::iter_preds(const ClientFlow& f, uint32_t agent_idx) const {
    const bool branch = spec_.topology == Topology::BranchMax || spec_.topology == Topology::BranchMin;
    if (warmup_iter(f) || !branch) {
        // Warmup passes visit agents strictly sequentially regardless of topology.
        if (agent_idx == 0) return {};
        return {agent_idx - 1};
    }
    switch (agent_idx) {
        case 0: return {};
        case 1:
        case 2: return {0};
        default: return {1, 2};
    }
}

void WorkloadController::begin_iteration(ClientFlow& f) {
    const uint32_t n = spec_.num_agents;
    f.done_this_iter.assign(n, false);
    f.released_this_iter.assign(n, false);
    f.participates.assign(n, true);
    if (!warmup_iter(f) && spec_.topology == Topology::BranchMin) {
        // One executor is chosen per pass; the other never runs (and is
        // exactly the conservatively prefetched-but-unused candidate).
        uint32_t chosen = 1 + static_cast<uint32_t>(f.rng() % 2);
        f.participates[chosen == 1 ? 2 : 1] = false;
    }
    f.windows.push_back(IterationWindow{f.id, f.cur_iter, f.cur_iter >= f.warmup_iters, -1, -1});
}

RequestSpec WorkloadController::make_request(ClientFlow& f, uint32_t agent_idx) {
    const AgentInfo& info = f.agents[agent_idx];
    const bool warm = warmup_iter(f);
    RequestSpec r;
    r.client = f.id;
    r.agent = info.id;
    r.iteration = f.cur_iter;
    r.measured = !warm;
    r.arrival_seq = f.next_arrival_seq++;
    r.id = static_cast<uint64_t>(f.id) * 1000000ULL + r.arrival_seq;
    r.prompt = info.fixed;
    r.fixed_len = info.fixed.size();
    if (!warm) {
        for (uint64_t i = 0; i < info.dyn_len; ++i) r.prompt.push_back(rand_token(f.rng, spec_.vocab_size));
        for (uint64_t i = 0; i < info.out_len; ++i) r.output.push_back(rand_token(f.rng, spec_.vocab_size));
    }
    r.step_metadata = f.graph->compute_steps({info.id});
    f.released_this_iter[agent_idx] = true;
    request_agent_[r.id] = {f.id, agent_idx};
    request_iter_[r.id] = {f.id, f.cur_iter};
    return r;
}

std::vector<RequestSpec> WorkloadController::release_ready(ClientFlow& f) {
    std::vector<RequestSpec> out;
    const uint32_t n = spec_.num_agents;
    for (uint32_t a = 0; a < n; ++a) {
        if (!f.participates[a] || f.released_this_iter[a]) continue;
        auto preds = iter_preds(f, a);
        bool any_done = false, all_done = true;
        bool has_participating_pred = false;
        for (uint32_t p : preds) {
            if (!f.participates[p]) continue;
            has_participating_pred = true;
            if (f.done_this_iter[p]) any_done = true; else all_done = false;
        }
        bool ready;
        if (!has_participating_pred) {
            ready = preds.empty();  // roots release at iteration start only
        } else if (spec_.topology == Topology::BranchMin && a == 3 && !warmup_iter(f)) {
            ready = any_done;  // MIN join: any completed predecessor suffices
        } else {
            ready = all_done;
        }
        if (ready) out.push_back(make_request(f, a));
    }
    return out;
}

std::vector<RequestSpec> WorkloadController::start() {
    std::vector<RequestSpec> out;
    for (ClientFlow& f : flows_) {
        out.push_back(make_request(f, 0));
    }
    return out;
}

std::vector<RequestSpec> WorkloadController::on_done(uint64_t request_id) {
    auto it = request_agent_.find(request_id);
    if (it == request_agent_.end()) throw_error(ErrorCode::InternalError, "on_done for unknown request");
    ClientFlow& f = flows_[it->second.first];
    const uint32_t agent_idx = it->second.second;
    f.done_this_iter[agent_idx] = true;

    std::vector<RequestSpec> out = release_ready(f);
    if (out.empty()) {
        // Iteration complete when every participating agent is done.
        bool all = true;
        for (uint32_t a = 0; a < spec_.num_agents; ++a)
            if (f.participates[a] && !f.done_this_iter[a]) all = false;
        if (all) {
            f.cur_iter += 1;
            if (f.cur_iter >= f.total_iters) {
                f.finished = true;
            } else {
                begin_iteration(f);
                out.push_back(make_request(f, 0));
            }
        }
    }
    return out;
}

bool WorkloadController::client_finished(ClientId client) const { return flows_.at(client).finished; }

bool WorkloadController::all_finished() const {
    return std::all_of(flows_.begin(), flows_.end(), [](const ClientFlow& f) { return f.finished; });
}

const StepGraph& WorkloadController::graph(ClientId client) const { return *flows_.at(client).graph; }

uint64_t WorkloadController::max_request_tokens() const {
    uint64_t worst = 0;
    for (const ClientFlow& f : flows_)
        for (const AgentInfo& a : f.agents)
            worst = std::max(worst, a.fixed.size() + a.dyn_len + a.out_len);
    return worst;
}

void WorkloadController::note_arrival(uint64_t request_id, VirtualTime t) {
    auto it = request_iter_.find(request_id);
    if (it == request_iter_.end()) return;
    auto& w = flows_[it->second.first].windows.at(it->second.second);
    if (w.start < 0 || t < w.start) w.start = t;
}

void WorkloadController::note_done(uint64_t request_id, VirtualTime t) {
    auto it = request_iter_.find(request_id);
    if (it == request_iter_.end()) return;
    auto& w = flows_[it->second.first].windows.at(it->second.second);
    if (t > w.end) w.end = t;
}

std::vector<IterationWindow> WorkloadController::iteration_windows() const {
    std::vector<IterationWindow> out;
    for (const ClientFlow& f : flows_)
        for (const IterationWindow& w : f.windows) out.push_back(w);
    return out;
}

}  // namespace kvsim
