#include "kvsim/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "kvsim/errors.hpp"

namespace kvsim {

namespace {

std::string join_path(const std::string& a, const std::string& b) {
    if (a.empty()) return b;
    if (a.back() == '/') return a + b;
    return a + "/" + b;
}

std::string format_axis_value(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

void write_run_csvs(const ExperimentConfig& cfg, const RunOutput& out, const std::string& dir) {
    std::ostringstream trace;
    trace << trace_csv_header() << "\n";
    for (const RequestTrace& t : out.sim.traces) trace << trace_csv_row(t) << "\n";
    write_file_atomic(join_path(dir, "trace.csv"), trace.str());

    std::ostringstream agg;
    agg << aggregate_csv_header() << "\n"
        << aggregate_csv_row(policy_name(cfg.scheduler.policy), cfg.workload.label(), cfg.seed, out.agg) << "\n";
    write_file_atomic(join_path(dir, "aggregate.csv"), agg.str());

    std::ostringstream tr;
    tr << transfers_csv_header() << "\n";
    for (const TransferJob& j : out.sim.transfers) tr << transfers_csv_row(j) << "\n";
    write_file_atomic(join_path(dir, "transfers.csv"), tr.str());
}

}  // namespace

RunOutput run_one(const ExperimentConfig& cfg, const std::string& dir) {
    cfg.validate();
    Simulator sim(cfg.cost, cfg.scheduler, cfg.workload, cfg.gpu_capacity_bytes, cfg.cpu_capacity_bytes,
                  cfg.seed);
    RunOutput out;
    out.sim = sim.run();
    out.agg = aggregate(out.sim.traces, out.sim.windows, out.sim.loaded_bytes, out.sim.offloaded_bytes,
                        out.sim.wasted_prefetch_bytes);
    write_run_csvs(cfg, out, dir);
    return out;
}

std::string compare_csv_header() {
    return aggregate_csv_header() + ",speedup";
}

std::string compare_csv_row(const ExperimentConfig& cfg, const CompareRow& row) {
    return aggregate_csv_row(row.policy, cfg.workload.label(), cfg.seed, row.agg) + "," +
           csv_double(row.speedup);
}

std::vector<CompareRow> run_compare(const ExperimentConfig& base, const std::vector<std::string>& policies,
                                    const std::string& out_dir) {
    if (policies.size() < 2)
        throw_error(ErrorCode::ConfigError, "compare needs at least two policies");
    std::vector<CompareRow> rows;
    for (const std::string& name : policies) {
        ExperimentConfig cfg = base;
        cfg.scheduler.policy = policy_from_name(name);
        cfg.scheduler.apply_policy_defaults();
        cfg.validate();
        RunOutput out = run_one(cfg, join_path(out_dir, name));
        CompareRow row;
        row.policy = name;
        row.agg = out.agg;
        rows.push_back(std::move(row));
    }
    double baseline = rows.front().agg.mean_workflow_latency;
    for (CompareRow& row : rows)
        row.speedup = row.agg.mean_workflow_latency > 0 ? baseline / row.agg.mean_workflow_latency : 0.0;

    std::ostringstream os;
    os << compare_csv_header() << "\n";
    for (const CompareRow& row : rows) os << compare_csv_row(base, row) << "\n";
    write_file_atomic(join_path(out_dir, "compare.csv"), os.str());
    return rows;
}

std::vector<std::string> sweep_axes() {
    return {"fixed_len",  "dyn_len",    "out_len",           "num_workflows",     "num_agents",
            "iterations", "shared_prefix_len", "warmup_rounds", "gpu_capacity_bytes", "max_running",
            "pcie_efficiency"};
}

void apply_axis(ExperimentConfig& cfg, const std::string& axis, double value) {
    auto as_count = [&](const char* what) -> uint64_t {
        double r = std::round(value);
        if (!(value >= 0) || std::abs(value - r) > 1e-9)
            throw_error(ErrorCode::UnknownAxis,
                        std::string("axis '") + what + "' needs a non-negative integer, got " +
                            format_axis_value(value));
        return static_cast<uint64_t>(r);
    };
    if (axis == "fixed_len") cfg.workload.fixed_len = as_count(axis.c_str());
    else if (axis == "dyn_len") cfg.workload.dyn_len = as_count(axis.c_str());
    else if (axis == "out_len") cfg.workload.out_len = as_count(axis.c_str());
    else if (axis == "num_workflows") cfg.workload.num_workflows = static_cast<uint32_t>(as_count(axis.c_str()));
    else if (axis == "num_agents") cfg.workload.num_agents = static_cast<uint32_t>(as_count(axis.c_str()));
    else if (axis == "iterations") cfg.workload.iterations = static_cast<uint32_t>(as_count(axis.c_str()));
    else if (axis == "shared_prefix_len") cfg.workload.shared_prefix_len = as_count(axis.c_str());
    else if (axis == "warmup_rounds") cfg.workload.warmup_rounds = static_cast<uint32_t>(as_count(axis.c_str()));
    else if (axis == "gpu_capacity_bytes") cfg.gpu_capacity_bytes = as_count(axis.c_str());
    else if (axis == "max_running") cfg.scheduler.max_running = static_cast<uint32_t>(as_count(axis.c_str()));
    else if (axis == "pcie_efficiency") cfg.cost.pcie_efficiency = value;
    else throw_error(ErrorCode::UnknownAxis, "unknown sweep axis '" + axis + "'");
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& axis,
                                const std::vector<double>& values, const std::vector<std::string>& policies,
                                const std::string& out_dir) {
    if (values.empty()) throw_error(ErrorCode::UnknownAxis, "sweep needs at least one value for axis '" + axis + "'");
    {
        ExperimentConfig probe = base;  // reject bad axes before any run
        apply_axis(probe, axis, values.front());
    }
    std::vector<SweepRow> rows;
    for (double v : values) {
        ExperimentConfig cfg = base;
        apply_axis(cfg, axis, v);
        std::string cell = axis + "_" + format_axis_value(v);
        std::vector<CompareRow> cmp = run_compare(cfg, policies, join_path(out_dir, cell));
        for (CompareRow& c : cmp) {
            SweepRow row;
            row.axis = axis;
            row.value = v;
            row.cmp = std::move(c);
            rows.push_back(std::move(row));
        }
    }
    std::ostringstream os;
    os << "axis,value," << compare_csv_header() << "\n";
    for (const SweepRow& row : rows) {
        ExperimentConfig cfg = base;
        apply_axis(cfg, row.axis, row.value);
        os << row.axis << "," << csv_double(row.value) << "," << compare_csv_row(cfg, row.cmp) << "\n";
    }
    write_file_atomic(join_path(out_dir, "sweep.csv"), os.str());
    return rows;
}

}  // namespace kvsim
