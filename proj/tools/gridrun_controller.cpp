// Controller daemon: binds the listen socket, announces the bound address on
// stdout as "LISTENING ip:port", waits for the configured worker count to
// register, then drives the run to completion.
#include <cstdlib>
#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "gridrun/controller.hpp"
#include "gridrun/run_config.hpp"
#include "gridrun/socket_net.hpp"

int main(int argc, char** argv) {
  CLI::App cli{"gridrun-controller: central scheduler"};
  std::string config_path;
  std::string listen;
  std::string metrics;
  std::string store;
  int64_t checkpoint_interval = -1;
  double busy_ratio = -1, blocked_ratio = -1, window_s = -1;
  int64_t windows = -1;
  bool no_rebalance = false;
  cli.add_option("config", config_path, "run config file (app, domain, workers)")->required();
  cli.add_option("--listen", listen, "bind address, ip:port (port 0 picks a free one)");
  cli.add_option("--checkpoint-interval", checkpoint_interval,
                 "outer iterations between checkpoints; 0 disables");
  cli.add_option("--straggler-busy", busy_ratio, "busy-ratio detection threshold");
  cli.add_option("--straggler-blocked", blocked_ratio, "peer blocked-ratio threshold");
  cli.add_option("--straggler-windows", windows, "consecutive windows before flagging");
  cli.add_option("--straggler-window-s", window_s, "profile window length, seconds");
  cli.add_flag("--no-rebalance", no_rebalance, "detect stragglers but never migrate");
  cli.add_option("--metrics", metrics, "metrics log path (JSON lines)");
  cli.add_option("--store", store, "checkpoint manifest directory");
  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e) == 0 ? 0 : 2;
  }
  if (const char* env = std::getenv("GRIDRUN_METRICS")) metrics = env;
  if (const char* env = std::getenv("GRIDRUN_STORE")) store = env;

  try {
    gridrun::RunConfig cfg = gridrun::load_run_config(config_path);
    if (listen.empty()) listen = cfg.listen;
    if (metrics.empty()) metrics = cfg.metrics_path;
    if (store.empty()) store = cfg.store_dir;
    if (checkpoint_interval >= 0) cfg.checkpoint_interval = checkpoint_interval;
    if (busy_ratio >= 0) cfg.straggler.busy_ratio = busy_ratio;
    if (blocked_ratio >= 0) cfg.straggler.blocked_ratio = blocked_ratio;
    if (windows >= 0) cfg.straggler.windows = windows;
    if (window_s >= 0) cfg.straggler.window = gridrun::SimTime(window_s * double(gridrun::kSecond));
    if (no_rebalance) cfg.straggler.rebalance = false;

    gridrun::SocketNet net({listen, "", 1});
    std::cout << "LISTENING " << net.listen_address() << std::endl;

    gridrun::MetricsLogger logger(metrics);
    gridrun::ControllerOptions copt;
    copt.setup = cfg.setup;
    copt.workers = uint32_t(cfg.workers);
    copt.checkpoint_interval = cfg.checkpoint_interval;
    copt.straggler = cfg.straggler;
    copt.store_dir = store.empty() ? "" : store + "/controller";
    copt.metrics = &logger;
    gridrun::ControllerCore controller(net, copt);
    net.attach(controller);
    net.run([&] { return controller.terminated(); });
    return int(controller.exit_code());
  } catch (const gridrun::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const gridrun::InvariantViolation& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 3;
  } catch (const gridrun::ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "fatal: " << e.what() << "\n";
    return 4;
  }
}
