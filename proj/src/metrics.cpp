#include "kvsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "kvsim/errors.hpp"

namespace kvsim {

double percentile(std::vector<double> values, double p) {
    if (values.empty()) return 0;
    std::sort(values.begin(), values.end());
    if (p <= 0) return values.front();
    if (p >= 100) return values.back();
    size_t rank = static_cast<size_t>(std::ceil(p / 100.0 * static_cast<double>(values.size())));
    if (rank == 0) rank = 1;
    return values[rank - 1];
}

Aggregates aggregate(const std::vector<RequestTrace>& traces, const std::vector<IterationWindow>& windows,
                     Bytes loaded_bytes, Bytes offloaded_bytes, Bytes wasted_prefetch_bytes) {
    Aggregates a;
    a.total_requests = traces.size();
    a.loaded_bytes = loaded_bytes;
    a.offloaded_bytes = offloaded_bytes;
    a.wasted_prefetch_bytes = wasted_prefetch_bytes;

    double latency_sum = 0;
    uint64_t fixed_hits = 0;
    double first_measured_arrival = -1;
    double last_measured_done = 0;
    for (const RequestTrace& t : traces) {
        if (t.done > a.makespan) a.makespan = t.done;
        if (!t.measured) continue;
        a.measured_requests += 1;
        latency_sum += t.done - t.arrival;
        a.total_stall_seconds += t.stall_seconds;
        a.prompt_tokens += t.prompt_tokens;
        a.loaded_tokens += t.loaded_tokens;
        a.hit_tokens += t.matched_tokens - t.loaded_tokens;
        a.recomputed_tokens += t.recomputed_tokens;
        if (t.matched_tokens >= t.fixed_tokens) fixed_hits += 1;
        if (first_measured_arrival < 0 || t.arrival < first_measured_arrival) first_measured_arrival = t.arrival;
        if (t.done > last_measured_done) last_measured_done = t.done;
    }
    if (a.measured_requests > 0) {
        a.mean_request_latency = latency_sum / static_cast<double>(a.measured_requests);
        a.fixed_hit_rate = static_cast<double>(fixed_hits) / static_cast<double>(a.measured_requests);
        a.measured_span = last_measured_done - first_measured_arrival;
    }
    if (a.prompt_tokens > 0) a.hit_token_ratio = static_cast<double>(a.hit_tokens) / static_cast<double>(a.prompt_tokens);

    std::vector<double> wl;
    for (const IterationWindow& w : windows)
        if (w.measured && w.start >= 0 && w.end >= w.start) wl.push_back(w.end - w.start);
    if (!wl.empty()) {
        double sum = 0;
        for (double v : wl) sum += v;
        a.mean_workflow_latency = sum / static_cast<double>(wl.size());
        a.median_workflow_latency = percentile(wl, 50);
        a.p99_workflow_latency = percentile(wl, 99);
    }
    return a;
}

std::string csv_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9f", v);
    return buf;
}

std::string trace_csv_header() {
    return "request_id,client,agent,arrival_seq,iteration,measured,arrival,prefill_start,first_token,done,"
           "prompt_tokens,matched_tokens,loaded_tokens,recomputed_tokens,fixed_tokens,output_tokens,"
           "loaded_bytes,stall_seconds";
}

std::string trace_csv_row(const RequestTrace& t) {
    std::ostringstream os;
    os << t.request_id << ',' << t.client << ',' << t.agent << ',' << t.arrival_seq << ',' << t.iteration << ','
       << (t.measured ? 1 : 0) << ',' << csv_double(t.arrival) << ',' << csv_double(t.prefill_start) << ','
       << csv_double(t.first_token) << ',' << csv_double(t.done) << ',' << t.prompt_tokens << ',' << t.matched_tokens
       << ',' << t.loaded_tokens << ',' << t.recomputed_tokens << ',' << t.fixed_tokens << ',' << t.output_tokens
       << ',' << t.loaded_bytes << ',' << csv_double(t.stall_seconds);
    return os.str();
}

std::string aggregate_csv_header() {
    return "policy,workload,seed,total_requests,measured_requests,mean_workflow_latency,median_workflow_latency,"
           "p99_workflow_latency,mean_request_latency,makespan,measured_span,total_stall_seconds,prompt_tokens,"
           "hit_tokens,loaded_tokens,recomputed_tokens,hit_token_ratio,fixed_hit_rate,loaded_bytes,offloaded_bytes,"
           "wasted_prefetch_bytes";
}

std::string aggregate_csv_row(const std::string& policy, const std::string& workload_label, uint64_t seed,
                              const Aggregates& a) {
    std::ostringstream os;
    os << policy << ',' << workload_label << ',' << seed << ',' << a.total_requests << ',' << a.measured_requests
       << ',' << csv_double(a.mean_workflow_latency) << ',' << csv_double(a.median_workflow_latency) << ','
       << csv_double(a.p99_workflow_latency) << ',' << csv_double(a.mean_request_latency) << ','
       << csv_double(a.makespan) << ',' << csv_double(a.measured_span) << ',' << csv_double(a.total_stall_seconds)
       << ',' << a.prompt_tokens << ',' << a.hit_tokens << ',' << a.loaded_tokens << ',' << a.recomputed_tokens << ','
       << csv_double(a.hit_token_ratio) << ',' << csv_double(a.fixed_hit_rate) << ',' << a.loaded_bytes << ','
       << a.offloaded_bytes << ',' << a.wasted_prefetch_bytes;
    return os.str();
}

std::string transfers_csv_header() { return "job_id,direction,bytes,enqueue,start,complete,purpose"; }

std::string transfers_csv_row(const TransferJob& j) {
    std::ostringstream os;
    os << j.id << ',' << direction_name(j.dir) << ',' << j.bytes << ',' << csv_double(j.enqueue) << ','
       << csv_double(j.start) << ',' << csv_double(j.complete) << ',' << purpose_name(j.purpose);
    return os.str();
}

void write_file_atomic(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    std::error_code ec;
    if (target.has_parent_path()) {
        fs::create_directories(target.parent_path(), ec);
        if (ec) throw_error(ErrorCode::IoError, "cannot create directory " + target.parent_path().string() + ": " + ec.message());
    }
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw_error(ErrorCode::IoError, "cannot open " + tmp.string() + " for writing");
        out << content;
        out.flush();
        if (!out) throw_error(ErrorCode::IoError, "write failed for " + tmp.string());
    }
    fs::rename(tmp, target, ec);
    if (ec) throw_error(ErrorCode::IoError, "cannot rename " + tmp.string() + " to " + path + ": " + ec.message());
}

}  // namespace kvsim
