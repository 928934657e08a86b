#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvsim/tier_manager.hpp"
#include "kvsim/types.hpp"
#include "kvsim/workload.hpp"

namespace kvsim {

// One row per request, written to trace.csv in request-id order. Column
// order is a stable interface; see README.
struct RequestTrace {
    uint64_t request_id = 0;
    ClientId client = 0;
    std::string agent;
    uint64_t arrival_seq = 0;  // per-client release index; policy-independent
    uint32_t iteration = 0;
    bool measured = false;
    VirtualTime arrival = 0;
    VirtualTime prefill_start = -1;
    VirtualTime first_token = -1;  // prefill completion instant
    VirtualTime done = -1;
    uint64_t prompt_tokens = 0;
    uint64_t matched_tokens = 0;    // cached-prefix tokens (GPU hits + loaded)
    uint64_t loaded_tokens = 0;     // matched tokens brought in by this request's own loads
    uint64_t recomputed_tokens = 0; // prompt - matched
    uint64_t fixed_tokens = 0;
    uint64_t output_tokens = 0;
    Bytes loaded_bytes = 0;         // PCIe volume of loads issued for this request
    double stall_seconds = 0;       // GPU-idle wait before prefill + explicit load gate
};

// Per-run aggregate metrics over MEASURED requests/windows only (except
// total_requests and makespan, which cover the whole run).
struct Aggregates {
    uint64_t total_requests = 0;
    uint64_t measured_requests = 0;
    double mean_workflow_latency = 0;    // per measured iteration window
    double median_workflow_latency = 0;  // nearest-rank
    double p99_workflow_latency = 0;     // nearest-rank
    double mean_request_latency = 0;     // done - arrival
    double makespan = 0;                 // last request completion in the run
    double measured_span = 0;            // last measured done - first measured arrival
    double total_stall_seconds = 0;
    uint64_t prompt_tokens = 0;
    uint64_t hit_tokens = 0;       // matched - loaded
    uint64_t loaded_tokens = 0;
    uint64_t recomputed_tokens = 0;
    double hit_token_ratio = 0;    // hit / prompt
    double fixed_hit_rate = 0;     // share of requests with matched >= fixed length
    Bytes loaded_bytes = 0;     // whole-run H2D volume, prefetch included
    Bytes offloaded_bytes = 0;  // whole-run D2H volume
    Bytes wasted_prefetch_bytes = 0;
};

Aggregates aggregate(const std::vector<RequestTrace>& traces, const std::vector<IterationWindow>& windows,
                     Bytes loaded_bytes, Bytes offloaded_bytes, Bytes wasted_prefetch_bytes);

// Nearest-rank percentile of an unsorted sample; p in [0, 100].
double percentile(std::vector<double> values, double p);

// Fixed-precision numeric rendering used in every CSV cell: times/ratios
// with 9 fractional digits, counts as plain integers. Deterministic across
// runs and platforms for identical doubles.
std::string csv_double(double v);

std::string trace_csv_header();
std::string trace_csv_row(const RequestTrace& t);
std::string aggregate_csv_header();
std::string aggregate_csv_row(const std::string& policy, const std::string& workload_label, uint64_t seed,
                              const Aggregates& a);
std::string transfers_csv_header();
std::string transfers_csv_row(const TransferJob& j);

// Writes content to path atomically (temp file + rename); creates parent
// directories as needed.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace kvsim
