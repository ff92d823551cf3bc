#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "gridrun/controller.hpp"
#include "gridrun/metrics.hpp"
#include "gridrun/oracle.hpp"
#include "gridrun/run_config.hpp"
#include "gridrun/sim_net.hpp"
#include "gridrun/worker.hpp"

namespace gridrun {

struct RunOutcome {
  uint32_t exit_code = 0;
  uint64_t iterations = 0;
  size_t copies = 0;
  size_t rebalances = 0;
  size_t rewinds = 0;
  uint64_t last_checkpoint = 0;
  StateFixture fixture;       // final state; entries empty when the run failed
  std::vector<json> records;  // full metrics log
  uint64_t trace_hash = 0;    // hash of every delivered frame, when traced
};

/// Runs the serial reference executor and returns its final-state fixture.
inline StateFixture oracle_fixture(const RunSetup& setup) {
  SerialOracle oracle(setup);
  oracle.run();
  StateFixture f;
  f.app = setup.app;
  f.entries = oracle.final_entries();
  return f;
}

/// Executes a config on the deterministic in-process transport: one
/// controller node and N worker nodes exchanging the same frames the socket
/// transport would carry. Faults come from the config's crash and throttle
/// plans. Returns once the virtual event queue drains.
inline RunOutcome run_sim(const RunConfig& cfg, bool trace = false) {
  SimNet::Params params = cfg.sim;
  params.seed = cfg.seed;
  SimNet net(params);
  net.enable_trace(trace);

  std::string store_root = cfg.store_dir;
  if (store_root.empty()) {
    store_root = (std::filesystem::temp_directory_path() /
                  ("gridrun-" + std::to_string(::getpid()) + "-" + std::to_string(cfg.seed)))
                     .string();
  }

  MetricsLogger metrics(cfg.metrics_path);

  SimEndpoint ctl_ep(net, kControllerId);
  ControllerOptions copt;
  copt.setup = cfg.setup;
  copt.workers = cfg.workers;
  copt.checkpoint_interval = cfg.checkpoint_interval;
  copt.straggler = cfg.straggler;
  copt.store_dir = store_root + "/controller";
  copt.metrics = &metrics;
  ControllerCore controller(ctl_ep, copt);
  net.attach(kControllerId, &controller);

  std::vector<std::unique_ptr<SimEndpoint>> eps;
  std::vector<std::unique_ptr<WorkerCore>> workers;
  for (uint32_t i = 1; i <= cfg.workers; ++i) {
    eps.push_back(std::make_unique<SimEndpoint>(net, i));
    WorkerOptions wopt;
    wopt.store_dir = store_root + "/w" + std::to_string(i);
    wopt.threads = cfg.threads;
    workers.push_back(std::make_unique<WorkerCore>(*eps.back(), wopt));
    net.attach(i, workers.back().get());
  }
  for (const auto& c : cfg.crashes) net.schedule_crash(c.worker, SimTime(c.at_s * double(kSecond)));
  for (const auto& t : cfg.throttles)
    net.schedule_throttle(t.worker, t.factor, SimTime(t.at_s * double(kSecond)));
  for (uint32_t i = 1; i <= cfg.workers; ++i) {
    WorkerCore* w = workers[i - 1].get();
    net.post(i, 0, [w] { w->start(); });
  }

  net.run();
  if (!controller.terminated())
    throw InvariantViolation("run stalled: controller never terminated");

  RunOutcome out;
  out.exit_code = controller.exit_code();
  out.iterations = controller.iteration();
  out.copies = controller.copy_count();
  out.rebalances = controller.rebalance_count();
  out.rewinds = controller.rewind_count();
  out.last_checkpoint = controller.last_checkpoint();
  out.fixture.app = cfg.setup.app;
  for (const auto& [o, vh] : controller.final_rows())
    out.fixture.entries.emplace_back(o, vh.first, vh.second);
  out.records = metrics.records();
  if (trace) out.trace_hash = net.trace_hash();
  if (!cfg.fixture_out.empty() && out.exit_code == 0) out.fixture.save(cfg.fixture_out);
  return out;
}

}  // namespace gridrun
