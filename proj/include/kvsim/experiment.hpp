#pragma once

#include <string>
#include <vector>

#include "kvsim/config.hpp"
#include "kvsim/metrics.hpp"
#include "kvsim/scheduler.hpp"

namespace kvsim {

struct RunOutput {
    Aggregates agg;
    SimResult sim;
};

// Simulates cfg once and writes trace.csv, aggregate.csv, and transfers.csv
// under dir (created if needed, files written atomically).
RunOutput run_one(const ExperimentConfig& cfg, const std::string& dir);

struct CompareRow {
    std::string policy;
    Aggregates agg;
    double speedup = 1.0;  // first policy's mean workflow latency / this one's
};

// Runs the same workload and seed once per policy (first entry is the
// speedup baseline), writing per-policy outputs under out_dir/<policy>/ and
// a combined out_dir/compare.csv. Requires at least two policies.
std::vector<CompareRow> run_compare(const ExperimentConfig& base, const std::vector<std::string>& policies,
                                    const std::string& out_dir);

// Numeric config axes a sweep may vary.
std::vector<std::string> sweep_axes();
void apply_axis(ExperimentConfig& cfg, const std::string& axis, double value);

struct SweepRow {
    std::string axis;
    double value = 0;
    CompareRow cmp;
};

// One compare per axis value; per-cell outputs under out_dir/<axis>_<value>/
// plus a long-format out_dir/sweep.csv for plotting.
std::vector<SweepRow> run_sweep(const ExperimentConfig& base, const std::string& axis,
                                const std::vector<double>& values, const std::vector<std::string>& policies,
                                const std::string& out_dir);

std::string compare_csv_header();
std::string compare_csv_row(const ExperimentConfig& cfg, const CompareRow& row);

}  // namespace kvsim
