#include "kvsim/cost_model.hpp"

namespace kvsim {

Bytes kv_bytes_per_token(uint64_t layers, uint64_t kv_heads, uint64_t head_dim, uint64_t dtype_bytes) {
    // 2 planes (K and V) per layer per KV head per head dim.
    return 2ULL * layers * kv_heads * head_dim * dtype_bytes;
}

void CostModel::validate() const {
    if (bytes_per_token == 0) throw_error(ErrorCode::ConfigError, "bytes_per_token must be > 0");
    if (prefill_a < 0 || prefill_b < 0) throw_error(ErrorCode::ConfigError, "prefill coefficients must be >= 0");
    if (decode_base < 0 || decode_per_seq < 0) throw_error(ErrorCode::ConfigError, "decode coefficients must be >= 0");
    if (h2d_bandwidth <= 0 || d2h_bandwidth <= 0) throw_error(ErrorCode::ConfigError, "bandwidth must be > 0");
    if (pcie_efficiency <= 0 || pcie_efficiency > 1) throw_error(ErrorCode::ConfigError, "pcie_efficiency must be in (0,1]");
    if (fixed_latency < 0) throw_error(ErrorCode::ConfigError, "fixed_latency must be >= 0");
}

CostModel profile_by_name(const std::string& name) {
    if (name == "a10g-llama8b") {
        // 24 GB part on PCIe Gen1-class effective bandwidth; 8B model with
        // 32 layers, 8 KV heads of dim 128 at 2 bytes -> 128 KiB per token.
        CostModel m;
        m.name = name;
        m.bytes_per_token = kv_bytes_per_token(32, 8, 128, 2);
        m.prefill_a = 400e-6;
        m.prefill_b = 5e-3;
        m.decode_base = 20e-3;
        m.decode_per_seq = 1e-3;
        m.h2d_bandwidth = 2e9;
        m.d2h_bandwidth = 2e9;
        m.pcie_efficiency = 0.6;
        m.fixed_latency = 50e-6;
        m.validate();
        return m;
    }
    if (name == "h100-qwen32b") {
        // 80 GB part on Gen5 (64 GB/s); 32B model with 64 layers, 8 KV heads
        // of dim 128 at 2 bytes -> 256 KiB per token.
        CostModel m;
        m.name = name;
        m.bytes_per_token = kv_bytes_per_token(64, 8, 128, 2);
        m.prefill_a = 60e-6;
        m.prefill_b = 3e-3;
        m.decode_base = 4e-3;
        m.decode_per_seq = 0.2e-3;
        m.h2d_bandwidth = 64e9;
        m.d2h_bandwidth = 64e9;
        m.pcie_efficiency = 0.6;
        m.fixed_latency = 50e-6;
        m.validate();
        return m;
    }
    throw_error(ErrorCode::ConfigError, "unknown profile: " + name);
}

std::vector<std::string> profile_names() { return {"a10g-llama8b", "h100-qwen32b"}; }

}  // namespace kvsim
