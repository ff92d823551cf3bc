#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <thread>

#include "gridrun/driver.hpp"
#include "gridrun/socket_net.hpp"

using namespace gridrun;

namespace {

std::string fresh_dir(const std::string& tag) {
  const auto p = std::filesystem::temp_directory_path() /
                 ("gridrun-sock-" + tag + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p.string();
}

RunSetup small_setup(const std::string& app, int64_t iterations) {
  RunSetup setup;
  setup.app = app;
  if (app == "water1d") {
    setup.domain.dims = 1;
    setup.domain.extent = {64, 1, 1};
    setup.domain.partitions = {2, 1, 1};
  } else {
    setup.domain.dims = 2;
    setup.domain.extent = {16, 8, 1};
    setup.domain.partitions = {2, 2, 1};
  }
  setup.domain.default_ghost_width = 1;
  setup.iterations = iterations;
  return setup;
}

struct LoopbackRun {
  uint32_t exit_code = 0;
  uint64_t iterations = 0;
  size_t copies = 0;
  StateFixture fixture;
};

// Controller on this thread, each worker on its own thread, all over real TCP
// loopback connections. Workers learn the controller's ephemeral port from
// listen_address() exactly as the daemon binaries do.
LoopbackRun run_loopback(const RunSetup& setup, uint32_t workers, const std::string& dir) {
  SocketNet ctl_net({.listen = "127.0.0.1:0", .controller = "", .threads = 1});
  const std::string ctl_addr = ctl_net.listen_address();

  ControllerOptions copt;
  copt.setup = setup;
  copt.workers = workers;
  copt.store_dir = dir + "/ctl";
  ControllerCore controller(ctl_net, copt);
  ctl_net.attach(controller);

  auto worker_main = [&](uint32_t i) {
    SocketNet net({.listen = "127.0.0.1:0", .controller = ctl_addr, .threads = 2});
    WorkerOptions wopt;
    wopt.listen_address = net.listen_address();
    wopt.store_dir = dir + "/w" + std::to_string(i);
    wopt.threads = 2;
    WorkerCore w(net, wopt);
    net.attach(w);
    w.start();
    net.run([&] { return w.terminated(); });
  };
  std::vector<std::thread> threads;
  for (uint32_t i = 1; i <= workers; ++i) threads.emplace_back(worker_main, i);
  ctl_net.run([&] { return controller.terminated(); });
  for (auto& t : threads) t.join();

  LoopbackRun out;
  out.exit_code = controller.exit_code();
  out.iterations = controller.iteration();
  out.copies = controller.copy_count();
  out.fixture.app = setup.app;
  for (const auto& [o, vh] : controller.final_rows())
    out.fixture.entries.emplace_back(o, vh.first, vh.second);
  return out;
}

}  // namespace

TEST_CASE("socket transport reproduces the serial reference over loopback") {
  const auto setup = small_setup("water1d", 3);
  const auto out = run_loopback(setup, 2, fresh_dir("water"));
  REQUIRE(out.exit_code == 0);
  REQUIRE(out.iterations == 3);
  REQUIRE(out.copies == 6);  // two boundary transfers per iteration
  const auto ref = oracle_fixture(setup);
  REQUIRE(out.fixture.digest() == ref.digest());
  REQUIRE(out.fixture.entries == ref.entries);
}

TEST_CASE("socket transport handles more partitions than workers") {
  const auto setup = small_setup("diffusion2d", 2);
  const auto out = run_loopback(setup, 3, fresh_dir("diff"));
  REQUIRE(out.exit_code == 0);
  REQUIRE(out.fixture.digest() == oracle_fixture(setup).digest());
}

TEST_CASE("address parsing accepts host:port and rejects junk") {
  const sockaddr_in a = parse_address("127.0.0.1:8443");
  REQUIRE(ntohs(a.sin_port) == 8443);
  REQUIRE_THROWS_AS(parse_address("127.0.0.1"), ConfigError);          // no port
  REQUIRE_THROWS_AS(parse_address("127.0.0.1:not-a-port"), ConfigError);
  REQUIRE_THROWS_AS(parse_address("127.0.0.1:70000"), ConfigError);    // out of range
  REQUIRE_THROWS_AS(parse_address("example.com:80"), ConfigError);     // not an IPv4 literal
  REQUIRE_THROWS_AS(parse_address(""), ConfigError);
}

TEST_CASE("the listener reports its real ephemeral port") {
  SocketNet net({.listen = "127.0.0.1:0", .controller = "", .threads = 1});
  const std::string addr = net.listen_address();
  REQUIRE(addr.rfind("127.0.0.1:", 0) == 0);
  REQUIRE(ntohs(parse_address(addr).sin_port) != 0);
}
