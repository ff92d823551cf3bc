#pragma once

#include <functional>
#include <vector>

#include "gridrun/common.hpp"
#include "gridrun/message.hpp"

namespace gridrun {

/// A protocol participant: the controller or a worker. Frames arrive already
/// split and tagged; `from` is the authenticated peer id.
class Node {
 public:
  virtual ~Node() = default;
  virtual void on_message(WorkerId from, MessageTag tag, const std::vector<uint8_t>& body) = 0;
};

/// The node's handle onto its network. Identical surface over the simulated
/// and socket transports, so controller and worker logic is written once.
///
/// run_async models worker compute: `work` executes off the control path and
/// `done` fires on the event loop once the modeled duration has elapsed
/// (virtual time under simulation, wall time over sockets). Up to the node's
/// thread budget of these may overlap.
class Endpoint {
 public:
  virtual ~Endpoint() = default;
  virtual WorkerId self() const = 0;
  virtual SimTime now() const = 0;
  virtual void send(WorkerId to, std::vector<uint8_t> frame_bytes) = 0;
  virtual void post(SimTime delay, std::function<void()> fn) = 0;
  virtual void run_async(SimTime modeled_cost, std::function<void()> work,
                         std::function<void()> done) = 0;
};

template <typename Msg>
void send_message(Endpoint& ep, WorkerId to, const Msg& m) {
  ep.send(to, encode_message(m));
}

}  // namespace gridrun
