#pragma once

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <queue>
#include <string>
#include <thread>
#include <vector>

#include "gridrun/common.hpp"
#include "gridrun/message.hpp"
#include "gridrun/transport.hpp"
#include "gridrun/wire.hpp"

namespace gridrun {

inline sockaddr_in parse_address(const std::string& s) {
  const auto colon = s.rfind(':');
  if (colon == std::string::npos) throw ConfigError("address must be host:port: " + s);
  const std::string host = s.substr(0, colon);
  const std::string port_s = s.substr(colon + 1);
  int port = -1;
  try {
    size_t pos = 0;
    port = std::stoi(port_s, &pos);
    if (pos != port_s.size()) port = -1;
  } catch (const std::exception&) {
  }
  if (port < 0 || port > 65535) throw ConfigError("bad port in address: " + s);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(uint16_t(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw ConfigError("bad IPv4 host: " + host);
  return addr;
}

/// TCP transport carrying the same frames as the simulated one. Connection
/// identity bootstraps off the registration traffic itself:
///   - a worker's first frame to the controller is its real registration;
///     the controller binds that connection to a provisional id and rebinds
///     it to the assigned worker id when the core answers with the reply;
///   - a worker learns its own id and the peer address book by watching the
///     reply arrive, then opens peer connections on demand, leading with a
///     hello frame (a registration whose claimed_id names the dialer) that
///     never reaches the node.
class SocketNet : public Endpoint {
 public:
  struct Options {
    std::string listen;      // "ip:port"; port 0 picks a free one
    std::string controller;  // empty on the controller itself
    uint32_t threads = 1;    // kernel pool size
  };

  explicit SocketNet(Options opt) : opt_(std::move(opt)) {
    start_ = std::chrono::steady_clock::now();
    if (::pipe(wake_pipe_) != 0) throw ConfigError("pipe failed");
    set_nonblocking(wake_pipe_[0]);
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw ConfigError("socket failed");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr = parse_address(opt_.listen);
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
      throw ConfigError("cannot bind " + opt_.listen);
    if (::listen(listen_fd_, 64) != 0) throw ConfigError("listen failed");
    socklen_t len = sizeof(addr);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    char host[64];
    ::inet_ntop(AF_INET, &addr.sin_addr, host, sizeof(host));
    listen_address_ = std::string(host) + ":" + std::to_string(ntohs(addr.sin_port));
    set_nonblocking(listen_fd_);
    if (!opt_.controller.empty()) {
      const int fd = dial(opt_.controller);
      conns_[fd].id = kControllerId;
      peer_fd_[kControllerId] = fd;
    }
    for (uint32_t i = 0; i < std::max(1u, opt_.threads); ++i)
      pool_.emplace_back([this] { pool_main(); });
  }

  ~SocketNet() override {
    {
      std::lock_guard<std::mutex> lk(mu_);
      pool_stop_ = true;
    }
    pool_cv_.notify_all();
    for (auto& t : pool_) t.join();
    for (auto& [fd, _] : conns_) ::close(fd);
    ::close(listen_fd_);
    ::close(wake_pipe_[0]);
    ::close(wake_pipe_[1]);
  }

  void attach(Node& node) { node_ = &node; }

  const std::string& listen_address() const { return listen_address_; }

  WorkerId self() const override { return self_; }

  SimTime now() const override {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

  void send(WorkerId to, std::vector<uint8_t> frame_bytes) override {
    if (!opt_.controller.empty() && to != kControllerId && !peer_fd_.count(to)) dial_peer(to);
    auto it = peer_fd_.find(to);
    if (it == peer_fd_.end())
      throw ProtocolError("no connection to peer " + std::to_string(to));
    const int fd = it->second;
    if (opt_.controller.empty() && to > kProvisionalBase) adopt_assigned_id(fd, frame_bytes);
    queue_write(fd, frame_bytes);
  }

  void post(SimTime delay, std::function<void()> fn) override {
    timers_.push({now() + std::max<SimTime>(delay, 0), seq_++, std::move(fn)});
  }

  void run_async(SimTime modeled_cost, std::function<void()> work,
                 std::function<void()> done) override {
    {
      std::lock_guard<std::mutex> lk(mu_);
      pool_jobs_.push_back({now(), modeled_cost, std::move(work), std::move(done)});
    }
    pool_cv_.notify_one();
  }

  /// Pumps the loop until `until` holds and all queued output is flushed.
  void run(const std::function<bool()>& until) {
    int drained = 0;
    while (true) {
      const bool finished = until() && !pending_output();
      if (finished && ++drained > 3) return;
      if (!finished) drained = 0;
      pump(finished ? 5 : next_timeout_ms());
    }
  }

 private:
  struct ConnData {
    WorkerId id = kUnbound;
    FrameDecoder decoder;
    std::deque<uint8_t> outbuf;
  };

  struct Timer {
    SimTime due = 0;
    uint64_t seq = 0;
    std::function<void()> fn;
    bool operator>(const Timer& other) const {
      return due != other.due ? due > other.due : seq > other.seq;
    }
  };

  struct PoolJob {
    SimTime started = 0;
    SimTime cost = 0;
    std::function<void()> work;
    std::function<void()> done;
  };

  static constexpr WorkerId kUnbound = 0xffffffff;
  static constexpr WorkerId kProvisionalBase = 1000;

  static void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, O_NONBLOCK); }

  int dial(const std::string& address) {
    sockaddr_in addr = parse_address(address);
    // Retry briefly: workers race the controller's bind at startup.
    for (int attempt = 0;; ++attempt) {
      const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
      if (fd < 0) throw ConfigError("socket failed");
      if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        set_nonblocking(fd);
        return fd;
      }
      ::close(fd);
      if (attempt > 250) throw ConfigError("cannot connect to " + address);
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
  }

  void dial_peer(WorkerId to) {
    auto addr = address_book_.find(to);
    if (addr == address_book_.end())
      throw ProtocolError("no address for peer " + std::to_string(to));
    const int fd = dial(addr->second);
    conns_[fd].id = to;
    peer_fd_[to] = fd;
    RegisterRequest hello;
    hello.listen_address = listen_address_;
    hello.claimed_id = self_;
    queue_write(fd, encode_message(hello));
  }

  /// The controller's reply names the worker id an anonymous connection now
  /// owns; route future sends to that id over the same socket.
  void adopt_assigned_id(int fd, const std::vector<uint8_t>& frame_bytes) {
    FrameDecoder d;
    d.feed(frame_bytes.data(), frame_bytes.size());
    uint16_t tag = 0;
    std::vector<uint8_t> body;
    if (!d.next(tag, body) || MessageTag(tag) != MessageTag::RegisterWorker) return;
    const auto reply = decode_message<RegisterReply>(body);
    conns_.at(fd).id = reply.worker_id;
    peer_fd_[reply.worker_id] = fd;
  }

  void queue_write(int fd, const std::vector<uint8_t>& bytes) {
    auto& conn = conns_.at(fd);
    conn.outbuf.insert(conn.outbuf.end(), bytes.begin(), bytes.end());
    flush(fd);
  }

  void flush(int fd) {
    auto& conn = conns_.at(fd);
    while (!conn.outbuf.empty()) {
      std::vector<uint8_t> chunk(
          conn.outbuf.begin(),
          conn.outbuf.begin() + std::min<size_t>(conn.outbuf.size(), 1 << 16));
      const ssize_t n = ::send(fd, chunk.data(), chunk.size(), MSG_NOSIGNAL);
      if (n <= 0) return;  // EAGAIN or peer gone; poll retries or reaps it
      conn.outbuf.erase(conn.outbuf.begin(), conn.outbuf.begin() + n);
    }
  }

  bool pending_output() const {
    for (const auto& [_, conn] : conns_)
      if (!conn.outbuf.empty()) return true;
    return false;
  }

  int next_timeout_ms() {
    SimTime due = timers_.empty() ? now() + 50'000'000 : timers_.top().due;
    {
      std::lock_guard<std::mutex> lk(mu_);
      for (const auto& c : completions_) due = std::min(due, c.due);
    }
    const SimTime ns = due - now();
    if (ns <= 0) return 0;
    return int(std::min<SimTime>(ns / 1'000'000 + 1, 50));
  }

  void pump(int timeout_ms) {
    fire_timers();
    drain_completions();
    std::vector<pollfd> fds;
    fds.push_back({listen_fd_, POLLIN, 0});
    fds.push_back({wake_pipe_[0], POLLIN, 0});
    std::vector<int> order;
    for (const auto& [fd, conn] : conns_) {
      fds.push_back({fd, short(POLLIN | (conn.outbuf.empty() ? 0 : POLLOUT)), 0});
      order.push_back(fd);
    }
    ::poll(fds.data(), nfds_t(fds.size()), timeout_ms);
    if (fds[0].revents & POLLIN) accept_all();
    if (fds[1].revents & POLLIN) {
      char buf[64];
      while (::read(wake_pipe_[0], buf, sizeof(buf)) > 0) {
      }
    }
    for (size_t i = 0; i < order.size(); ++i) {
      const int fd = order[i];
      if (!conns_.count(fd)) continue;
      if (fds[i + 2].revents & POLLOUT) flush(fd);
      if (fds[i + 2].revents & (POLLIN | POLLHUP | POLLERR)) read_conn(fd);
    }
    fire_timers();
    drain_completions();
  }

  void accept_all() {
    while (true) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) return;
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      set_nonblocking(fd);
      conns_[fd];  // unbound until its first frame identifies it
    }
  }

  void read_conn(int fd) {
    auto& conn = conns_.at(fd);
    uint8_t buf[1 << 16];
    while (true) {
      const ssize_t n = ::recv(fd, buf, sizeof(buf), 0);
      if (n > 0) {
        conn.decoder.feed(buf, size_t(n));
        continue;
      }
      if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) break;
      drop_conn(fd);  // closed or errored; liveness timeouts handle the rest
      return;
    }
    uint16_t tag = 0;
    std::vector<uint8_t> body;
    while (conns_.count(fd) && conn.decoder.next(tag, body)) handle_frame(fd, tag, body);
  }

  void drop_conn(int fd) {
    auto it = conns_.find(fd);
    if (it == conns_.end()) return;
    for (auto p = peer_fd_.begin(); p != peer_fd_.end();)
      p = p->second == fd ? peer_fd_.erase(p) : std::next(p);
    conns_.erase(it);
    ::close(fd);
  }

  void handle_frame(int fd, uint16_t tag, const std::vector<uint8_t>& body) {
    auto& conn = conns_.at(fd);
    if (conn.id == kUnbound) {
      if (MessageTag(tag) != MessageTag::RegisterWorker)
        throw ProtocolError("first frame on a connection must register");
      const auto req = decode_message<RegisterRequest>(body);
      if (req.claimed_id != 0) {
        conn.id = req.claimed_id;  // peer hello, transport-level only
        peer_fd_.emplace(req.claimed_id, fd);  // keep an existing outbound route
        return;
      }
      conn.id = next_provisional_++;
      peer_fd_[conn.id] = fd;
    } else if (conn.id == kControllerId && MessageTag(tag) == MessageTag::RegisterWorker) {
      // Registration reply: adopt the assigned id and the peer address book.
      const auto reply = decode_message<RegisterReply>(body);
      self_ = reply.worker_id;
      for (const auto& [id, address] : reply.peers)
        if (id != self_) address_book_[id] = address;
    }
    node_->on_message(conn.id, MessageTag(tag), body);
  }

  void fire_timers() {
    while (!timers_.empty() && timers_.top().due <= now()) {
      auto fn = std::move(const_cast<Timer&>(timers_.top()).fn);
      timers_.pop();
      fn();
    }
  }

  void pool_main() {
    while (true) {
      PoolJob job;
      {
        std::unique_lock<std::mutex> lk(mu_);
        pool_cv_.wait(lk, [this] { return pool_stop_ || !pool_jobs_.empty(); });
        if (pool_stop_) return;
        job = std::move(pool_jobs_.front());
        pool_jobs_.pop_front();
      }
      job.work();
      Timer t;
      t.due = job.started + job.cost;
      t.fn = std::move(job.done);
      {
        std::lock_guard<std::mutex> lk(mu_);
        t.seq = seq_++;
        completions_.push_back(std::move(t));
      }
      const char byte = 1;
      [[maybe_unused]] ssize_t n = ::write(wake_pipe_[1], &byte, 1);
    }
  }

  void drain_completions() {
    std::vector<Timer> ready;
    {
      std::lock_guard<std::mutex> lk(mu_);
      for (auto it = completions_.begin(); it != completions_.end();) {
        if (it->due <= now()) {
          ready.push_back(std::move(*it));
          it = completions_.erase(it);
        } else {
          ++it;
        }
      }
    }
    for (auto& t : ready) t.fn();
  }

  Node* node_ = nullptr;
  Options opt_;
  WorkerId self_ = kControllerId;
  std::string listen_address_;
  std::chrono::steady_clock::time_point start_;

  int listen_fd_ = -1;
  int wake_pipe_[2] = {-1, -1};
  std::map<int, ConnData> conns_;
  std::map<WorkerId, int> peer_fd_;
  std::map<WorkerId, std::string> address_book_;
  WorkerId next_provisional_ = kProvisionalBase + 1;

  std::priority_queue<Timer, std::vector<Timer>, std::greater<Timer>> timers_;
  uint64_t seq_ = 0;

  std::mutex mu_;
  std::condition_variable pool_cv_;
  std::vector<std::thread> pool_;
  std::deque<PoolJob> pool_jobs_;
  std::vector<Timer> completions_;
  bool pool_stop_ = false;
};

}  // namespace gridrun
