#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gridrun/app.hpp"
#include "gridrun/common.hpp"
#include "gridrun/sim_net.hpp"

namespace gridrun {

enum class TransportKind { Sim, Socket };

struct CrashPlan {
  WorkerId worker = 0;
  double at_s = 0;  // controller clock
};

struct ThrottlePlan {
  WorkerId worker = 0;
  double factor = 1.0;  // multiplier on modeled compute time
  double at_s = 0;
};

struct StragglerParams {
  double busy_ratio = 0.9;     // compute/total above this marks a candidate
  double blocked_ratio = 0.3;  // some peer blocked on it above this confirms
  int64_t windows = 3;         // consecutive flagged windows before acting
  SimTime window = 2 * kSecond;
  SimTime heartbeat_period = kSecond;
  int64_t heartbeat_misses = 3;  // missed beats before a worker is dead
  bool rebalance = true;         // off: detect and log but leave placement alone
};

struct RunConfig {
  RunSetup setup;
  int64_t workers = 1;
  int64_t threads = 1;  // per-worker executor threads
  uint64_t seed = 1;
  TransportKind transport = TransportKind::Sim;
  int64_t checkpoint_interval = 0;  // outer iterations between checkpoints; 0 = off
  StragglerParams straggler;
  std::string metrics_path;
  std::string store_dir;    // durable shard directory
  std::string fixture_out;  // optional: write the final-state fixture here
  std::string listen = "127.0.0.1:0";  // socket transport: controller bind address
  std::vector<CrashPlan> crashes;
  std::vector<ThrottlePlan> throttles;
  SimNetParams sim;
};

namespace config_detail {

inline int64_t to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const int64_t n = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError(key + ": not an integer: '" + v + "'");
  }
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": not a number: '" + v + "'");
  }
}

inline std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : v) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

}  // namespace config_detail

/// Parses the flat key = value run description. Lines starting with # are
/// comments. Unknown keys are rejected so typos fail loudly.
inline RunConfig parse_run_config(const std::string& text) {
  using namespace config_detail;
  RunConfig cfg;
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  size_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(ln) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(ln) + ": empty key");
    if (!kv.emplace(key, val).second) throw ConfigError("duplicate key: " + key);
  }

  auto take = [&](const char* key) -> std::string {
    auto it = kv.find(key);
    if (it == kv.end()) return "";
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_int = [&](const char* key, int64_t dflt) {
    const std::string v = take(key);
    return v.empty() ? dflt : to_int(key, v);
  };
  auto take_double = [&](const char* key, double dflt) {
    const std::string v = take(key);
    return v.empty() ? dflt : to_double(key, v);
  };

  RunSetup& s = cfg.setup;
  s.app = take("app");
  if (s.app.empty()) throw ConfigError("missing required key: app");
  s.domain.dims = int(take_int("dims", 0));
  if (s.domain.dims < 1 || s.domain.dims > 3) throw ConfigError("dims must be 1, 2 or 3");

  auto take_axes = [&](const char* key, std::array<int64_t, 3>& out) {
    const std::string v = take(key);
    if (v.empty()) throw ConfigError(std::string("missing required key: ") + key);
    const auto parts = split(v, ',');
    if (int(parts.size()) != s.domain.dims)
      throw ConfigError(std::string(key) + ": expected " + std::to_string(s.domain.dims) +
                        " comma-separated values");
    out = {1, 1, 1};
    for (size_t i = 0; i < parts.size(); ++i) out[i] = to_int(key, trim(parts[i]));
  };
  take_axes("extent", s.domain.extent);
  take_axes("partitions", s.domain.partitions);
  s.domain.default_ghost_width = take_int("ghost_width", 1);

  s.iterations = take_int("iterations", 1);
  if (s.iterations < 0) throw ConfigError("iterations must be >= 0");
  s.solver_cap = take_int("solver_cap", 10);
  if (s.solver_cap < 0) throw ConfigError("solver_cap must be >= 0");
  s.tolerance = take_double("tolerance", 1e-12);
  s.dt_c = take_double("dt_c", 0.1);
  s.dt_eps = take_double("dt_eps", 1e-6);
  s.alpha = take_double("alpha", 0.2);
  s.drag = take_double("drag", 0.05);
  s.flux = take_double("flux", 0.15);
  s.init_pattern = take_int("init_pattern", 0);
  s.cost_per_cell = take_int("cost_per_cell_ns", 2'000);
  s.cost_base = take_int("cost_base_ns", 50'000);

  cfg.workers = take_int("workers", 1);
  if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
  cfg.threads = take_int("threads", 1);
  if (cfg.threads < 1) throw ConfigError("threads must be >= 1");
  cfg.seed = uint64_t(take_int("seed", 1));
  cfg.checkpoint_interval = take_int("checkpoint_interval", 0);
  if (cfg.checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be >= 0");

  const std::string transport = take("transport");
  if (transport.empty() || transport == "sim") {
    cfg.transport = TransportKind::Sim;
  } else if (transport == "socket") {
    cfg.transport = TransportKind::Socket;
  } else {
    throw ConfigError("transport must be sim or socket");
  }

  cfg.straggler.busy_ratio = take_double("straggler_busy_ratio", 0.9);
  cfg.straggler.blocked_ratio = take_double("straggler_blocked_ratio", 0.3);
  cfg.straggler.windows = take_int("straggler_windows", 3);
  cfg.straggler.window = SimTime(take_double("straggler_window_s", 2.0) * double(kSecond));
  cfg.straggler.heartbeat_period =
      SimTime(take_double("heartbeat_period_s", 1.0) * double(kSecond));
  cfg.straggler.heartbeat_misses = take_int("heartbeat_misses", 3);
  cfg.straggler.rebalance = take_int("rebalance", 1) != 0;

  cfg.metrics_path = take("metrics_path");
  cfg.store_dir = take("store_dir");
  cfg.fixture_out = take("fixture_out");
  const std::string listen = take("listen");
  if (!listen.empty()) cfg.listen = listen;

  const std::string crash = take("crash");
  if (!crash.empty())
    for (const std::string& c : split(crash, ',')) {
      const auto f = split(trim(c), ':');
      if (f.size() != 2) throw ConfigError("crash: expected worker:time_s");
      cfg.crashes.push_back(
          {WorkerId(to_int("crash", trim(f[0]))), to_double("crash", trim(f[1]))});
    }
  const std::string throttle = take("throttle");
  if (!throttle.empty())
    for (const std::string& c : split(throttle, ',')) {
      const auto f = split(trim(c), ':');
      if (f.size() != 3) throw ConfigError("throttle: expected worker:factor:time_s");
      cfg.throttles.push_back({WorkerId(to_int("throttle", trim(f[0]))),
                               to_double("throttle", trim(f[1])),
                               to_double("throttle", trim(f[2]))});
    }

  cfg.sim.seed = cfg.seed;
  cfg.sim.base_latency = SimTime(take_double("sim_base_latency_us", 50.0) * 1000.0);
  cfg.sim.jitter = SimTime(take_double("sim_jitter_us", 100.0) * 1000.0);
  cfg.sim.per_byte = take_int("sim_per_byte_ns", 0);

  if (!kv.empty()) throw ConfigError("unknown key: " + kv.begin()->first);

  cfg.setup.domain.validate();
  for (const auto& c : cfg.crashes)
    if (c.worker < 1 || int64_t(c.worker) > cfg.workers)
      throw ConfigError("crash: no such worker");
  for (const auto& t : cfg.throttles)
    if (t.worker < 1 || int64_t(t.worker) > cfg.workers)
      throw ConfigError("throttle: no such worker");
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace gridrun
