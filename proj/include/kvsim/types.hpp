#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <unordered_map>
#include <vector>

namespace kvsim {

using TokenId = int32_t;
using TokenSeq = std::vector<TokenId>;
using ClientId = uint32_t;
using Bytes = uint64_t;
// Simulated wall clock, in seconds. Never backed by the host clock.
using VirtualTime = double;

// Identifies one agent of one client's workflow. Token namespaces are
// per-client, so the same agent name under two clients never shares cache.
struct AgentId {
    ClientId client = 0;
    std::string name;

    bool operator==(const AgentId& o) const { return client == o.client && name == o.name; }
    bool operator<(const AgentId& o) const {
        if (client != o.client) return client < o.client;
        return name < o.name;
    }
};

struct AgentIdHash {
    size_t operator()(const AgentId& a) const {
        size_t h = std::hash<std::string>()(a.name);
        return h ^ (std::hash<uint64_t>()(a.client) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
    }
};

// Steps-to-execution value. Finite values count workflow steps until the
// agent can run; kStepUnreachable sorts after every finite value.
using StepValue = int64_t;
inline constexpr StepValue kStepUnreachable = std::numeric_limits<StepValue>::max();

using StepMap = std::unordered_map<AgentId, StepValue, AgentIdHash>;

}  // namespace kvsim
