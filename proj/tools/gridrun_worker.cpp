// Worker daemon: dials the controller, registers, and serves until told to
// terminate. Exits with the code the controller broadcast.
#include <cstdlib>
#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "gridrun/socket_net.hpp"
#include "gridrun/worker.hpp"

int main(int argc, char** argv) {
  CLI::App cli{"gridrun-worker: kernel executor for a remote controller"};
  std::string controller;
  std::string listen = "127.0.0.1:0";
  std::string store;
  uint32_t threads = 1;
  cli.add_option("--controller", controller, "controller address, ip:port")->required();
  cli.add_option("--listen", listen, "bind address, ip:port (port 0 picks a free one)");
  cli.add_option("--store", store, "durable shard directory (empty: no persistence)");
  cli.add_option("--threads", threads, "concurrent kernel budget")->check(CLI::PositiveNumber);
  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e) == 0 ? 0 : 2;
  }
  if (const char* env = std::getenv("GRIDRUN_STORE")) store = env;

  try {
    gridrun::SocketNet net({listen, controller, threads});
    gridrun::WorkerOptions wopt;
    wopt.listen_address = net.listen_address();
    wopt.store_dir = store;
    wopt.threads = threads;
    gridrun::WorkerCore worker(net, wopt);
    net.attach(worker);
    worker.start();
    net.run([&] { return worker.terminated(); });
    return int(worker.exit_code());
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
