#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "gridrun/driver.hpp"

using namespace gridrun;

namespace {

std::string fresh_dir(const std::string& tag) {
  const auto p = std::filesystem::temp_directory_path() /
                 ("gridrun-rt-" + tag + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  return p.string();
}

RunConfig water_cfg(int64_t iterations, int64_t workers) {
  RunConfig cfg;
  cfg.setup.app = "water1d";
  cfg.setup.domain.dims = 1;
  cfg.setup.domain.extent = {64, 1, 1};
  cfg.setup.domain.partitions = {2, 1, 1};
  cfg.setup.domain.default_ghost_width = 1;
  cfg.setup.iterations = iterations;
  cfg.workers = workers;
  return cfg;
}

RunConfig diffusion_cfg(std::array<int64_t, 3> partitions, int64_t workers,
                        int64_t iterations = 3) {
  RunConfig cfg;
  cfg.setup.app = "diffusion2d";
  cfg.setup.domain.dims = 2;
  cfg.setup.domain.extent = {32, 16, 1};
  cfg.setup.domain.partitions = partitions;
  cfg.setup.domain.default_ghost_width = 1;
  cfg.setup.iterations = iterations;
  cfg.workers = workers;
  return cfg;
}

int64_t count_events(const std::vector<json>& records, const std::string& event) {
  int64_t n = 0;
  for (const auto& r : records) n += r.value("event", std::string()) == event;
  return n;
}

}  // namespace

TEST_CASE("water run matches the serial reference on every worker count") {
  const auto expected = oracle_fixture(water_cfg(3, 1).setup);
  for (int64_t workers : {1, 2, 4}) {
    auto cfg = water_cfg(3, workers);
    cfg.store_dir = fresh_dir("water-w" + std::to_string(workers));
    const auto out = run_sim(cfg);
    INFO("workers " << workers);
    REQUIRE(out.exit_code == 0);
    REQUIRE(out.iterations == 3);
    REQUIRE(out.fixture.digest() == expected.digest());
    REQUIRE(out.fixture.entries == expected.entries);
  }
}

TEST_CASE("water inserts exactly two ghost copies per iteration") {
  // Two partitions on two workers: each iteration the two AdvanceWater jobs
  // read the neighbor's boundary region, so exactly two transfers cross the
  // worker boundary and nothing else moves.
  for (int64_t iters : {1, 3, 5}) {
    auto cfg = water_cfg(iters, 2);
    cfg.store_dir = fresh_dir("copies-i" + std::to_string(iters));
    const auto out = run_sim(cfg);
    REQUIRE(out.exit_code == 0);
    REQUIRE(out.copies == size_t(2 * iters));
  }
  // One worker holds both partitions: nothing ever crosses.
  auto cfg = water_cfg(3, 1);
  cfg.store_dir = fresh_dir("copies-w1");
  REQUIRE(run_sim(cfg).copies == 0);
}

TEST_CASE("diffusion matches the serial reference across partition layouts") {
  const std::array<int64_t, 3> layouts[] = {
      {1, 1, 1}, {2, 1, 1}, {2, 2, 1}, {4, 2, 1}};  // 1, 2, 4, 8 partitions
  for (const auto& parts : layouts) {
    const auto expected = oracle_fixture(diffusion_cfg(parts, 1).setup);
    for (int64_t workers : {1, 2, 4}) {
      auto cfg = diffusion_cfg(parts, workers);
      cfg.store_dir =
          fresh_dir("diff-" + std::to_string(parts[0]) + "x" + std::to_string(parts[1]) + "-w" +
                    std::to_string(workers));
      const auto out = run_sim(cfg);
      INFO("partitions " << parts[0] << "x" << parts[1] << " workers " << workers);
      REQUIRE(out.exit_code == 0);
      REQUIRE(out.fixture.digest() == expected.digest());
      if (workers == 1) REQUIRE(out.copies == 0);  // single node: all local
    }
  }
}

TEST_CASE("checkpoints do not perturb results and land on the interval") {
  auto plain = water_cfg(6, 2);
  plain.store_dir = fresh_dir("ckpt-plain");
  const auto base = run_sim(plain);
  REQUIRE(base.exit_code == 0);
  REQUIRE(base.last_checkpoint == 0);  // checkpointing off by default

  auto cfg = water_cfg(6, 2);
  cfg.checkpoint_interval = 2;
  cfg.store_dir = fresh_dir("ckpt-on");
  const auto out = run_sim(cfg);
  REQUIRE(out.exit_code == 0);
  REQUIRE(out.fixture.digest() == base.fixture.digest());
  // Boundaries at iterations 2, 4 and 6: three commits.
  REQUIRE(out.last_checkpoint == 3);
  REQUIRE(count_events(out.records, "checkpoint") == 3);
  // The metrics log records every commit with its manifest iteration.
  std::vector<int64_t> at;
  for (const auto& r : out.records)
    if (r.value("event", std::string()) == "checkpoint") at.push_back(r.value("iteration", -1));
  REQUIRE(at == std::vector<int64_t>{2, 4, 6});
}

TEST_CASE("a crash after a checkpoint rewinds once and recomputes the tail") {
  // The first checkpoint (2 iterations done) commits around t=2.1ms; a crash
  // at 2.5ms must recover from it rather than restart from scratch.
  auto cfg = water_cfg(6, 2);
  cfg.checkpoint_interval = 2;
  cfg.store_dir = fresh_dir("crash-ckpt");
  cfg.crashes.push_back({2, 0.0025});
  const auto out = run_sim(cfg);
  REQUIRE(out.exit_code == 0);
  REQUIRE(out.rewinds == 1);

  const auto expected = oracle_fixture(cfg.setup);
  REQUIRE(out.fixture.digest() == expected.digest());
  REQUIRE(out.fixture.entries == expected.entries);

  // The rewind names the completed-iteration count of the manifest it loaded;
  // recompute resumes at that 0-indexed marker, not at zero.
  int64_t rewind_count = -1;
  int64_t first_after = -1;
  for (const auto& r : out.records) {
    const auto e = r.value("event", std::string());
    if (e == "rewind") {
      rewind_count = r.value("iteration", int64_t(-1));
    } else if (rewind_count >= 0 && first_after < 0 && e == "iteration") {
      first_after = r.value("iteration", int64_t(-1));
    }
  }
  REQUIRE(rewind_count >= 2);  // a durable checkpoint, not the implicit start
  REQUIRE(first_after == rewind_count);
}

TEST_CASE("a crash with no durable checkpoint rewinds to the start") {
  RunConfig cfg = diffusion_cfg({2, 2, 1}, 3);
  cfg.setup.domain.extent = {32, 24, 1};
  cfg.store_dir = fresh_dir("crash-zero");
  cfg.crashes.push_back({3, 0.002});
  const auto out = run_sim(cfg);
  REQUIRE(out.exit_code == 0);
  REQUIRE(out.rewinds == 1);
  const auto expected = oracle_fixture(cfg.setup);
  REQUIRE(out.fixture.digest() == expected.digest());
  // The rewind record names checkpoint 0 (implicit initial state).
  for (const auto& r : out.records)
    if (r.value("event", std::string()) == "rewind") REQUIRE(r.value("checkpoint", -1) == 0);
}

TEST_CASE("losing every worker fails the run with exit 4") {
  auto cfg = water_cfg(4, 2);
  cfg.store_dir = fresh_dir("all-dead");
  cfg.crashes.push_back({1, 0.0005});
  cfg.crashes.push_back({2, 0.0006});
  const auto out = run_sim(cfg);
  REQUIRE(out.exit_code == 4);
  REQUIRE(out.fixture.entries.empty());
}

TEST_CASE("a throttled worker is detected and its partitions migrate") {
  auto make = [](bool rebalance) {
    RunConfig cfg;
    cfg.setup.app = "diffusion2d";
    cfg.setup.domain.dims = 2;
    cfg.setup.domain.extent = {64, 8, 1};
    cfg.setup.domain.partitions = {8, 1, 1};
    cfg.setup.domain.default_ghost_width = 1;
    cfg.setup.iterations = 30;
    cfg.setup.init_pattern = 1;
    cfg.workers = 4;
    cfg.straggler.window = SimTime(20 * kSecond / 1000);  // 20 ms windows
    cfg.straggler.heartbeat_period = kSecond / 1000;
    cfg.straggler.heartbeat_misses = 8;
    cfg.straggler.rebalance = rebalance;
    cfg.throttles.push_back({2, 8.0, 0.0});
    return cfg;
  };

  auto cfg = make(true);
  cfg.store_dir = fresh_dir("straggler-on");
  const auto out = run_sim(cfg);
  REQUIRE(out.exit_code == 0);
  REQUIRE(out.rebalances >= 1);
  REQUIRE(count_events(out.records, "straggler") >= 1);
  REQUIRE(out.fixture.digest() == oracle_fixture(cfg.setup).digest());

  // Detection happened well inside the 50-simulated-second budget.
  double straggler_at = -1;
  for (const auto& r : out.records)
    if (r.value("event", std::string()) == "straggler") {
      straggler_at = to_seconds(r.value("t", SimTime(0)));
      break;
    }
  REQUIRE(straggler_at >= 0);
  REQUIRE(straggler_at < 50.0);

  // Migration pays: the adaptive run beats the same fault without it.
  auto stuck = make(false);
  stuck.store_dir = fresh_dir("straggler-off");
  const auto slow = run_sim(stuck);
  REQUIRE(slow.exit_code == 0);
  REQUIRE(slow.rebalances == 0);
  const auto end_of = [](const std::vector<json>& records) {
    SimTime t = 0;
    for (const auto& r : records) t = std::max(t, r.value("t", SimTime(0)));
    return t;
  };
  REQUIRE(end_of(out.records) < end_of(slow.records));
}

TEST_CASE("identical seeded runs are identical, different seeds are not") {
  auto cfg = diffusion_cfg({2, 2, 1}, 3);
  cfg.store_dir = fresh_dir("det-a");
  const auto a = run_sim(cfg, true);
  cfg.store_dir = fresh_dir("det-b");
  const auto b = run_sim(cfg, true);
  REQUIRE(a.trace_hash == b.trace_hash);
  REQUIRE(a.records == b.records);
  REQUIRE(a.fixture.digest() == b.fixture.digest());

  cfg.seed = 999;
  cfg.store_dir = fresh_dir("det-c");
  const auto c = run_sim(cfg, true);
  REQUIRE(a.trace_hash != c.trace_hash);      // different event timings
  REQUIRE(a.fixture.digest() == c.fixture.digest());  // but identical physics
}

TEST_CASE("iteration markers count each outer step once") {
  auto cfg = water_cfg(5, 2);
  cfg.store_dir = fresh_dir("iters");
  const auto out = run_sim(cfg);
  REQUIRE(out.iterations == 5);
  REQUIRE(count_events(out.records, "iteration") == 5);
  REQUIRE(count_events(out.records, "terminate") == 1);
}

TEST_CASE("summarize flattens notable events and rejects truncated logs") {
  auto cfg = water_cfg(6, 2);
  cfg.checkpoint_interval = 3;
  cfg.store_dir = fresh_dir("summ");
  const auto out = run_sim(cfg);
  REQUIRE(out.exit_code == 0);
  const std::string csv = summarize_log(out.records);
  REQUIRE(csv.rfind("time_s,iteration,event\n", 0) == 0);
  REQUIRE(csv.find(",checkpoint\n") != std::string::npos);
  size_t iter_rows = 0;
  for (size_t pos = 0; (pos = csv.find(",iteration\n", pos)) != std::string::npos; ++pos)
    ++iter_rows;
  REQUIRE(iter_rows == 6);

  // Chopping the terminate record off makes the log truncated.
  const std::vector<json> cut(out.records.begin(), out.records.end() - 1);
  REQUIRE_THROWS_AS(summarize_log(cut), ConfigError);

  // A clean zero-iteration log tabulates to just the header.
  MetricsLogger empty;
  empty.log(0, "run_start");
  empty.log(5, "terminate");
  REQUIRE(summarize_log(empty.records()) == "time_s,iteration,event\n");
}

TEST_CASE("the metrics clock is monotone and the log closes exactly once") {
  MetricsLogger log;
  log.log(100, "run_start");
  log.log(50, "iteration");  // racing source: clamped, never backwards
  REQUIRE(log.records()[1]["t"].get<SimTime>() == 100);
  log.log(200, "terminate");
  REQUIRE(log.closed());
  REQUIRE_THROWS_AS(log.log(300, "iteration"), InvariantViolation);
}

TEST_CASE("verify compares a log against a fixture") {
  auto cfg = water_cfg(3, 2);
  cfg.store_dir = fresh_dir("verify");
  const auto out = run_sim(cfg);
  auto expected = oracle_fixture(cfg.setup);
  const auto [ok, report] = verify_log(out.records, expected);
  REQUIRE(ok);
  REQUIRE(report.rfind("PASS", 0) == 0);

  std::get<2>(expected.entries[0]) ^= 1;  // flip one payload hash
  const auto [bad, bad_report] = verify_log(out.records, expected);
  REQUIRE_FALSE(bad);
  REQUIRE(bad_report.rfind("FAIL", 0) == 0);
}

TEST_CASE("fixtures round-trip through disk and reject tampering") {
  const auto f = oracle_fixture(water_cfg(2, 1).setup);
  const std::string dir = fresh_dir("fixture");
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/state.json";
  f.save(path);
  const auto back = StateFixture::load(path);
  REQUIRE(back.entries == f.entries);
  REQUIRE(back.digest() == f.digest());

  // A fixture whose digest disagrees with its entries is rejected.
  json j = f.to_json();
  j["entries"][0][1] = j["entries"][0][1].get<uint64_t>() + 1;
  std::ofstream(path) << j.dump();
  REQUIRE_THROWS_AS(StateFixture::load(path), ConfigError);
}

namespace {
struct Sink : Node {  // stands in for the controller; drops everything
  void on_message(WorkerId, MessageTag, const std::vector<uint8_t>&) override {}
};
}  // namespace

TEST_CASE("workers reject protocol violations") {
  RunSetup setup = water_cfg(1, 2).setup;
  Sink controller;

  // Scripted controller: register the worker, then feed it bad traffic.
  // Per-link FIFO delivery keeps the reply ahead of the later frames.
  auto boot = [&](SimNet& net, WorkerCore& w) {
    net.attach(kControllerId, &controller);
    net.post(1, 0, [&w] { w.start(); });
    RegisterReply reply;
    reply.worker_id = 1;
    reply.setup = setup.to_bytes();
    const auto framed = encode_message(reply);
    net.post(kControllerId, 1000, [&net, framed] { net.send(kControllerId, 1, framed); });
  };

  SECTION("duplicate job id") {
    SimNet net;
    SimEndpoint ep(net, 1);
    WorkerCore w(ep, {});
    net.attach(1, &w);
    boot(net, w);
    ExecuteJobMsg job;
    job.spec.id = 50;
    job.spec.before = {49};            // never completes: job stays pending
    job.dep_locations = {2};           // remote, so no local wait registration
    net.post(kControllerId, 2000, [&] {
      net.send(kControllerId, 1, encode_message(job));
      net.send(kControllerId, 1, encode_message(job));
    });
    REQUIRE_THROWS_AS(net.run(), ProtocolError);
  }

  SECTION("conflicting writes to one instance") {
    SimNet net;
    SimEndpoint ep(net, 1);
    WorkerCore w(ep, {});
    net.attach(1, &w);
    boot(net, w);
    ExecuteJobMsg a;
    a.spec.id = 50;
    a.spec.before = {49};
    a.dep_locations = {2};
    a.spec.writes = {0};
    a.write_versions = {1};
    ExecuteJobMsg b = a;
    b.spec.id = 51;
    net.post(kControllerId, 2000, [&] {
      net.send(kControllerId, 1, encode_message(a));
      net.send(kControllerId, 1, encode_message(b));
    });
    REQUIRE_THROWS_AS(net.run(), InvariantViolation);
  }

  SECTION("copy to self") {
    SimNet net;
    SimEndpoint ep(net, 1);
    WorkerCore w(ep, {});
    net.attach(1, &w);
    boot(net, w);
    CopySendMsg copy;
    copy.copy_job = 60;
    copy.object = 0;
    copy.version = 0;
    copy.to = 1;  // the worker itself
    net.post(kControllerId, 2000, [&] { net.send(kControllerId, 1, encode_message(copy)); });
    REQUIRE_THROWS_AS(net.run(), ProtocolError);
  }
}
