#include "kvsim/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "kvsim/errors.hpp"

namespace kvsim {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& path, const std::string& what) {
    throw_error(ErrorCode::ConfigError, path + ": " + what);
}

// Strict object reader: every key must be consumed, leftovers are errors.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) bad(path_, "expected an object");
    }

    bool has(const char* key) {
        consumed_.insert(key);
        return j_.contains(key);
    }

    const json& child(const char* key) {
        consumed_.insert(key);
        return j_.at(key);
    }

    template <typename T>
    void opt(const char* key, T& out) {
        consumed_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        read(*it, key, out);
    }

    template <typename T>
    void req(const char* key, T& out) {
        consumed_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) bad(path_, "missing required key '" + std::string(key) + "'");
        read(*it, key, out);
    }

    void finish() const {
        for (const auto& [key, value] : j_.items()) {
            if (!consumed_.count(key)) bad(path_, "unknown key '" + key + "'");
        }
    }

    const std::string& path() const { return path_; }

private:
    template <typename T>
    void read(const json& v, const char* key, T& out) {
        if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
            if (v.is_number_float()) bad(path_, std::string("key '") + key + "' must be an integer");
            if constexpr (std::is_unsigned_v<T>) {
                if (v.is_number_integer() && !v.is_number_unsigned() && v.get<int64_t>() < 0)
                    bad(path_, std::string("key '") + key + "' must be non-negative");
            }
        }
        try {
            v.get_to(out);
        } catch (const json::exception& e) {
            bad(path_, std::string("key '") + key + "': " + e.what());
        }
    }

    const json& j_;
    std::string path_;
    std::set<std::string> consumed_;
};

void parse_cost_overrides(const json& j, CostModel& cost) {
    Section s(j, "cost_model");
    s.opt("name", cost.name);
    s.opt("bytes_per_token", cost.bytes_per_token);
    s.opt("prefill_a", cost.prefill_a);
    s.opt("prefill_b", cost.prefill_b);
    s.opt("decode_base", cost.decode_base);
    s.opt("decode_per_seq", cost.decode_per_seq);
    s.opt("h2d_bandwidth", cost.h2d_bandwidth);
    s.opt("d2h_bandwidth", cost.d2h_bandwidth);
    s.opt("pcie_efficiency", cost.pcie_efficiency);
    s.opt("fixed_latency", cost.fixed_latency);
    s.finish();
}

void parse_hardware(const json& j, ExperimentConfig& cfg) {
    Section s(j, "hardware");
    s.req("gpu_capacity_bytes", cfg.gpu_capacity_bytes);
    s.opt("cpu_capacity_bytes", cfg.cpu_capacity_bytes);
    s.finish();
}

void parse_scheduler(const json& j, SchedulerConfig& sc) {
    Section s(j, "scheduler");
    std::string policy;
    s.req("policy", policy);
    sc.policy = policy_from_name(policy);
    sc.apply_policy_defaults();
    s.opt("max_running", sc.max_running);
    s.opt("max_concurrent_prefetch", sc.max_concurrent_prefetch);
    s.opt("prefetch_enabled", sc.prefetch_enabled);
    s.opt("overlap_fraction", sc.overlap_fraction);
    if (s.has("boundary_mode")) {
        std::string mode;
        s.req("boundary_mode", mode);
        if (mode == "explicit") sc.boundary_mode = BoundaryMode::Explicit;
        else if (mode == "heuristic") sc.boundary_mode = BoundaryMode::Heuristic;
        else bad(s.path(), "boundary_mode must be 'explicit' or 'heuristic'");
    }
    s.opt("heuristic_window", sc.heuristic_window);
    if (s.has("eviction")) {
        std::string ev;
        s.req("eviction", ev);
        if (ev == "LRU") sc.eviction = EvictionPolicy::Lru;
        else if (ev == "WORKFLOW_AWARE") sc.eviction = EvictionPolicy::WorkflowAware;
        else bad(s.path(), "eviction must be 'LRU' or 'WORKFLOW_AWARE'");
    }
    if (s.has("tier")) {
        std::string t;
        s.req("tier", t);
        if (t == "DISCARD") sc.tier = TierMode::Discard;
        else if (t == "OFFLOAD") sc.tier = TierMode::Offload;
        else bad(s.path(), "tier must be 'DISCARD' or 'OFFLOAD'");
    }
    s.finish();
}

void parse_peer(const json& j, PeerParams& p) {
    Section s(j, "workload.peer");
    s.opt("fixed_median", p.fixed_median);
    s.opt("dyn_median", p.dyn_median);
    s.opt("out_median", p.out_median);
    s.opt("sigma", p.sigma);
    s.opt("min_len", p.min_len);
    s.finish();
}

void parse_workload(const json& j, WorkloadSpec& w) {
    Section s(j, "workload");
    std::string topo;
    s.req("topology", topo);
    w.topology = topology_from_name(topo);
    s.opt("num_agents", w.num_agents);
    s.opt("iterations", w.iterations);
    s.opt("num_workflows", w.num_workflows);
    s.opt("fixed_len", w.fixed_len);
    s.opt("dyn_len", w.dyn_len);
    s.opt("out_len", w.out_len);
    s.opt("shared_prefix_len", w.shared_prefix_len);
    s.opt("warmup_rounds", w.warmup_rounds);
    s.opt("vocab_size", w.vocab_size);
    if (s.has("peer")) parse_peer(s.child("peer"), w.peer);
    s.finish();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    Section s(j, "config");
    int version = -1;
    s.req("schema_version", version);
    if (version != kSchemaVersion) {
        std::ostringstream os;
        os << "unsupported schema_version " << version << " (expected " << kSchemaVersion << ")";
        bad("config", os.str());
    }
    s.opt("seed", cfg.seed);
    s.opt("out_dir", cfg.out_dir);
    bool have_profile = s.has("profile");
    bool have_inline = s.has("cost_model");
    if (!have_profile && !have_inline)
        bad("config", "either 'profile' or a full inline 'cost_model' is required");
    if (have_profile) {
        s.req("profile", cfg.profile);
        cfg.cost = profile_by_name(cfg.profile);
    }
    if (have_inline) parse_cost_overrides(s.child("cost_model"), cfg.cost);
    if (!s.has("hardware")) bad("config", "missing required section 'hardware'");
    parse_hardware(s.child("hardware"), cfg);
    if (!s.has("scheduler")) bad("config", "missing required section 'scheduler'");
    parse_scheduler(s.child("scheduler"), cfg.scheduler);
    if (!s.has("workload")) bad("config", "missing required section 'workload'");
    parse_workload(s.child("workload"), cfg.workload);
    s.finish();
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw_error(ErrorCode::ConfigError, "cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw_error(ErrorCode::ConfigError, "malformed JSON in '" + path + "': " + e.what());
    }
    return from_json(j);
}

void ExperimentConfig::validate() const {
    cost.validate();
    scheduler.validate();
    workload.validate();
    if (gpu_capacity_bytes == 0) throw_error(ErrorCode::ConfigError, "gpu_capacity_bytes must be > 0");
    if (out_dir.empty()) throw_error(ErrorCode::ConfigError, "out_dir must not be empty");
    Bytes largest_fixed = cost.kv_bytes(workload.fixed_len);
    if (workload.topology != Topology::PeerStyle && largest_fixed >= gpu_capacity_bytes) {
        std::ostringstream os;
        os << "gpu_capacity_bytes " << gpu_capacity_bytes << " does not exceed the largest fixed-prompt KV footprint "
           << largest_fixed;
        throw_error(ErrorCode::ConfigError, os.str());
    }
}

StepGraph graph_from_json(const nlohmann::json& workflow) {
    Section s(workflow, "workflow");
    AggregationKind default_kind = AggregationKind::MaxPlusOne;
    auto parse_kind = [](const std::string& v, const std::string& path) {
        if (v == "MAX_PLUS_ONE") return AggregationKind::MaxPlusOne;
        if (v == "MIN_PLUS_ONE") return AggregationKind::MinPlusOne;
        bad(path, "aggregation must be 'MAX_PLUS_ONE' or 'MIN_PLUS_ONE'");
    };
    if (s.has("aggregation")) {
        std::string agg;
        s.req("aggregation", agg);
        default_kind = parse_kind(agg, "workflow.aggregation");
    }

    std::vector<GraphNode> nodes;
    if (!s.has("agents")) bad("workflow", "missing required key 'agents'");
    const json& agents = s.child("agents");
    if (!agents.is_array()) bad("workflow", "'agents' must be an array");
    for (const json& a : agents) {
        GraphNode n;
        n.kind = default_kind;
        if (a.is_string()) {
            n.id = AgentId{0, a.get<std::string>()};
        } else if (a.is_object()) {
            Section as(a, "workflow.agents[]");
            std::string name;
            as.req("name", name);
            n.id = AgentId{0, name};
            if (as.has("aggregation")) {
                std::string agg;
                as.req("aggregation", agg);
                n.kind = parse_kind(agg, "workflow.agents[].aggregation");
            }
            as.finish();
        } else {
            bad("workflow.agents[]", "entries must be names or {name, aggregation} objects");
        }
        nodes.push_back(std::move(n));
    }

    std::vector<GraphEdge> edges;
    if (s.has("edges")) {
        const json& je = s.child("edges");
        if (!je.is_array()) bad("workflow", "'edges' must be an array");
        for (const json& e : je) {
            if (!e.is_array() || e.size() != 2 || !e[0].is_string() || !e[1].is_string())
                bad("workflow.edges[]", "each edge must be a [from, to] pair of agent names");
            edges.push_back(GraphEdge{AgentId{0, e[0].get<std::string>()}, AgentId{0, e[1].get<std::string>()}});
        }
    }
    s.finish();
    try {
        return StepGraph::build(nodes, edges);
    } catch (const SimError& e) {
        throw_error(ErrorCode::ConfigError, std::string("workflow graph: ") + e.what());
    }
}

}  // namespace kvsim
