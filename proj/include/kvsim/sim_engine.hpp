#pragma once

#include <cstdint>
#include <queue>
#include <vector>

#include "kvsim/types.hpp"

namespace kvsim {

enum class EventKind : uint8_t {
    Arrival,           // a released request enters the scheduler queue (id = request)
    PrefillDone,       // prefill op finished (id = request)
    DecodeIter,        // one batched decode iteration finished (id = iteration tag)
    TransferDone,      // a PCIe transfer completed (id = transfer job)
    WorkflowStepDone,  // a request fully completed; drives dependency release (id = request)
};

struct Event {
    VirtualTime time = 0;
    uint64_t seq = 0;  // insertion order; total-orders simultaneous events
    EventKind kind = EventKind::Arrival;
    uint64_t id = 0;
};

// Min-heap on (time, seq): deterministic given a deterministic push order.
class EventQueue {
public:
    void push(VirtualTime time, EventKind kind, uint64_t id) {
        heap_.push(Event{time, next_seq_++, kind, id});
    }
    bool empty() const { return heap_.empty(); }
    size_t size() const { return heap_.size(); }
    Event pop() {
        Event e = heap_.top();
        heap_.pop();
        return e;
    }

private:
    struct Later {
        bool operator()(const Event& a, const Event& b) const {
            if (a.time != b.time) return a.time > b.time;
            return a.seq > b.seq;
        }
    };
    std::priority_queue<Event, std::vector<Event>, Later> heap_;
    uint64_t next_seq_ = 0;
};

// Tracks GPU compute occupancy and the cumulative busy integral, used to
// attribute queueing time vs. load-induced stall to individual requests.
class ComputeClock {
public:
    bool idle(VirtualTime now) const { return now >= busy_until_; }
    VirtualTime busy_until() const { return busy_until_; }

    void occupy(VirtualTime from, VirtualTime until) {
        busy_accum_ += until - from;
        busy_until_ = until;
    }

    // Total busy seconds accumulated in ops that start at or before t; ops
    // are only ever scheduled from idle, so at query time t either the
    // current op has ended (accum final) or t lies inside it.
    double busy_integral(VirtualTime t) const {
        if (t >= busy_until_) return busy_accum_;
        return busy_accum_ - (busy_until_ - t);
    }

private:
    VirtualTime busy_until_ = 0;
    double busy_accum_ = 0;
};

}  // namespace kvsim
