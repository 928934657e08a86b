#pragma once

#include <string>

#include <json.hpp>

#include "kvsim/cost_model.hpp"
#include "kvsim/scheduler.hpp"
#include "kvsim/step_graph.hpp"
#include "kvsim/workload.hpp"

namespace kvsim {

// One experiment, fully described by a single JSON file. Unknown keys are
// hard errors so typos cannot silently fall back to defaults.
struct ExperimentConfig {
    static constexpr int kSchemaVersion = 1;

    uint64_t seed = 1;
    std::string out_dir = "out";
    std::string profile;  // named base profile; empty if fully inline
    CostModel cost;       // resolved: profile plus inline overrides
    Bytes gpu_capacity_bytes = 0;
    Bytes cpu_capacity_bytes = 0;  // 0 = unbounded backup store
    SchedulerConfig scheduler;
    WorkloadSpec workload;

    void validate() const;

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::string& path);
};

// Standalone workflow-graph loader: {"agents": [...], "edges": [[from, to],
// ...], "aggregation": "MAX_PLUS_ONE"|"MIN_PLUS_ONE"}. Lets library users
// describe graphs in the same JSON dialect the experiment files use.
StepGraph graph_from_json(const nlohmann::json& workflow);

}  // namespace kvsim
