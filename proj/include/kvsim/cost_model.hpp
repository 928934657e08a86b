#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kvsim/errors.hpp"
#include "kvsim/types.hpp"

namespace kvsim {

// Analytic timing/size model for one GPU + model pairing. All parameters are
// plain config data; the shipped profiles are calibrated so that moving KV
// over PCIe beats recomputing it for prefixes of ~512 tokens and up.
struct CostModel {
    std::string name = "custom";

    Bytes bytes_per_token = 0;   // KV bytes one token occupies across all layers
    double prefill_a = 0;        // seconds per prompt token
    double prefill_b = 0;        // fixed per-prefill floor, seconds
    double decode_base = 0;      // seconds per decode iteration, batch-independent part
    double decode_per_seq = 0;   // seconds per decode iteration per running sequence
    double h2d_bandwidth = 0;    // bytes/second, host-to-device
    double d2h_bandwidth = 0;    // bytes/second, device-to-host
    double pcie_efficiency = 0.6;
    double fixed_latency = 50e-6;  // per-transfer setup cost, seconds

    Bytes kv_bytes(uint64_t tokens) const { return tokens * bytes_per_token; }

    // prefill_time(0) == prefill_b: even a fully cached prompt pays the
    // scheduling floor.
    double prefill_time(uint64_t new_tokens) const {
        return prefill_a * static_cast<double>(new_tokens) + prefill_b;
    }

    double decode_iter_time(uint64_t batch_size) const {
        return decode_base + decode_per_seq * static_cast<double>(batch_size);
    }

    double transfer_seconds(Bytes bytes, double bandwidth) const {
        return static_cast<double>(bytes) / (bandwidth * pcie_efficiency) + fixed_latency;
    }
    double h2d_seconds(Bytes bytes) const { return transfer_seconds(bytes, h2d_bandwidth); }
    double d2h_seconds(Bytes bytes) const { return transfer_seconds(bytes, d2h_bandwidth); }

    void validate() const;
};

// KV bytes per token from model geometry: K and V planes, per layer, per
// KV head, per head dimension, at the given element width.
Bytes kv_bytes_per_token(uint64_t layers, uint64_t kv_heads, uint64_t head_dim, uint64_t dtype_bytes);

// Named calibration profiles shipped with the simulator.
CostModel profile_by_name(const std::string& name);
std::vector<std::string> profile_names();

}  // namespace kvsim
