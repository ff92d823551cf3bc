#pragma once

#include <functional>
#include <map>
#include <memory>
#include <queue>
#include <set>
#include <vector>

#include "gridrun/common.hpp"
#include "gridrun/transport.hpp"
#include "gridrun/wire.hpp"

namespace gridrun {

/// Deterministic discrete-event network. All nodes run in one thread on a
/// virtual clock; events are totally ordered by (time, insertion sequence),
/// so a given seed replays bit-identically. Message latency is
///   base + hash(seed, src, dst, sequence) % jitter + bytes * per_byte
/// clamped so each directed link stays FIFO.
struct SimNetParams {
  uint64_t seed = 1;
  SimTime base_latency = 50'000;    // 50 us
  SimTime jitter = 100'000;         // up to 100 us extra, pseudo-random
  SimTime per_byte = 0;             // transfer cost per payload byte
  uint64_t max_events = 200'000'000;
};

class SimNet {
 public:
  using Params = SimNetParams;

  struct TraceEntry {
    SimTime t = 0;
    WorkerId from = 0;
    WorkerId to = 0;
    uint32_t len = 0;
    uint64_t hash = 0;
  };

  explicit SimNet(Params p = {}) : params_(p) {}

  void attach(WorkerId id, Node* node) { nodes_[id] = node; }

  SimTime now() const { return now_; }

  void send(WorkerId from, WorkerId to, std::vector<uint8_t> bytes) {
    if (crashed_.count(from)) return;
    if (nodes_.find(to) == nodes_.end())
      throw InvariantViolation("send to unknown node " + std::to_string(to));
    SimTime latency = params_.base_latency + SimTime(bytes.size()) * params_.per_byte;
    if (params_.jitter > 0)
      latency += SimTime(splitmix64(params_.seed ^ link_key(from, to) ^ seq_) %
                         uint64_t(params_.jitter));
    SimTime at = now_ + latency;
    SimTime& floor = link_floor_[link_key(from, to)];
    if (at < floor) at = floor;  // keep the directed link FIFO
    floor = at;
    Event ev;
    ev.t = at;
    ev.kind = Event::Deliver;
    ev.from = from;
    ev.who = to;
    ev.bytes = std::move(bytes);
    push(std::move(ev));
  }

  /// Schedules `fn` to run as `who` after `delay` of virtual time. Dropped
  /// if `who` has crashed by then.
  void post(WorkerId who, SimTime delay, std::function<void()> fn) {
    if (crashed_.count(who)) return;
    Event ev;
    ev.t = now_ + std::max<SimTime>(delay, 0);
    ev.kind = Event::Callback;
    ev.who = who;
    ev.fn = std::move(fn);
    push(std::move(ev));
  }

  /// Fail-stop at virtual time `at`: the node executes nothing at or after
  /// `at`, receives no traffic, and every later delivery from it is dropped,
  /// including messages already in flight.
  void schedule_crash(WorkerId who, SimTime at) {
    Event ev;
    ev.t = at;
    ev.kind = Event::Crash;
    ev.who = who;
    push(std::move(ev));
  }

  /// Scales modeled compute durations for jobs starting at or after `from`.
  void schedule_throttle(WorkerId who, double factor, SimTime from) {
    throttles_[who].emplace_back(from, factor);
  }

  double throttle_factor(WorkerId who, SimTime at) const {
    double f = 1.0;
    auto it = throttles_.find(who);
    if (it == throttles_.end()) return f;
    for (const auto& [start, factor] : it->second)
      if (at >= start) f *= factor;
    return f;
  }

  bool crashed(WorkerId who) const { return crashed_.count(who) > 0; }

  bool step() {
    if (queue_.empty()) return false;
    Event ev = std::move(const_cast<Event&>(queue_.top()));
    queue_.pop();
    if (++executed_ > params_.max_events)
      throw InvariantViolation("simulation exceeded event budget");
    now_ = ev.t;
    switch (ev.kind) {
      case Event::Deliver: {
        if (crashed_.count(ev.who) || crashed_.count(ev.from)) break;
        if (trace_on_) trace_.push_back({ev.t, ev.from, ev.who, uint32_t(ev.bytes.size()),
                                         fnv1a64(ev.bytes)});
        deliver(ev.from, ev.who, ev.bytes);
        break;
      }
      case Event::Callback:
        if (!crashed_.count(ev.who)) ev.fn();
        break;
      case Event::Crash:
        crashed_.insert(ev.who);
        break;
    }
    return true;
  }

  /// Runs until the queue drains or `until` is passed (0 means no limit).
  void run(SimTime until = 0) {
    while (!queue_.empty()) {
      if (until > 0 && queue_.top().t > until) {
        now_ = until;
        return;
      }
      step();
    }
  }

  bool idle() const { return queue_.empty(); }
  uint64_t executed() const { return executed_; }

  void enable_trace(bool on) { trace_on_ = on; }
  const std::vector<TraceEntry>& trace() const { return trace_; }

  uint64_t trace_hash() const {
    uint64_t h = 14695981039346656037ull;
    for (const auto& e : trace_) {
      h = fnv1a64(&e.t, sizeof e.t, h);
      h = fnv1a64(&e.from, sizeof e.from, h);
      h = fnv1a64(&e.to, sizeof e.to, h);
      h = fnv1a64(&e.hash, sizeof e.hash, h);
    }
    return h;
  }

  const Params& params() const { return params_; }

 private:
  struct Event {
    enum Kind { Deliver, Callback, Crash } kind = Deliver;
    SimTime t = 0;
    uint64_t seq = 0;
    WorkerId from = 0;
    WorkerId who = 0;  // receiver, callback owner, or crash target
    std::vector<uint8_t> bytes;
    std::function<void()> fn;

    bool operator>(const Event& o) const { return t != o.t ? t > o.t : seq > o.seq; }
  };

  static uint64_t link_key(WorkerId from, WorkerId to) {
    return (uint64_t(from) << 32) | uint64_t(to);
  }

  void push(Event ev) {
    ev.seq = seq_++;
    queue_.push(std::move(ev));
  }

  void deliver(WorkerId from, WorkerId to, const std::vector<uint8_t>& bytes) {
    auto it = nodes_.find(to);
    if (it == nodes_.end() || !it->second) return;
    FrameDecoder dec;
    dec.feed(bytes.data(), bytes.size());
    uint16_t tag = 0;
    std::vector<uint8_t> body;
    while (dec.next(tag, body)) it->second->on_message(from, MessageTag(tag), body);
  }

  Params params_;
  SimTime now_ = 0;
  uint64_t seq_ = 0;
  uint64_t executed_ = 0;
  std::map<WorkerId, Node*> nodes_;
  std::map<uint64_t, SimTime> link_floor_;
  std::set<WorkerId> crashed_;
  std::map<WorkerId, std::vector<std::pair<SimTime, double>>> throttles_;
  std::priority_queue<Event, std::vector<Event>, std::greater<Event>> queue_;
  bool trace_on_ = false;
  std::vector<TraceEntry> trace_;
};

/// Endpoint adapter binding one node id to a SimNet. Modeled compute runs
/// inline and completes after the modeled duration, scaled by any active
/// throttle, with at most the thread budget in flight (enforced by the
/// caller).
class SimEndpoint : public Endpoint {
 public:
  SimEndpoint(SimNet& net, WorkerId self) : net_(net), self_(self) {}

  WorkerId self() const override { return self_; }
  SimTime now() const override { return net_.now(); }

  void send(WorkerId to, std::vector<uint8_t> frame_bytes) override {
    net_.send(self_, to, std::move(frame_bytes));
  }

  void post(SimTime delay, std::function<void()> fn) override {
    net_.post(self_, delay, std::move(fn));
  }

  void run_async(SimTime modeled_cost, std::function<void()> work,
                 std::function<void()> done) override {
    work();
    const double f = net_.throttle_factor(self_, net_.now());
    net_.post(self_, SimTime(double(modeled_cost) * f), std::move(done));
  }

 private:
  SimNet& net_;
  WorkerId self_;
};

}  // namespace gridrun
