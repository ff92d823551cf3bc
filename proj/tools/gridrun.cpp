// Run driver and log toolbox.
//   gridrun run <config>              execute a run (sim in-process, socket
//                                     via controller/worker subprocesses)
//   gridrun oracle <config> <out>     write the serial reference fixture
//   gridrun summarize <log>           flatten a metrics log to CSV on stdout
//   gridrun verify <log> <fixture>    compare a run's final state to a fixture
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "gridrun/driver.hpp"

namespace {

using namespace gridrun;

std::string sibling_binary(const char* name) {
  std::error_code ec;
  auto self = std::filesystem::read_symlink("/proc/self/exe", ec);
  if (ec) return name;
  return (self.parent_path() / name).string();
}

void apply_env_overrides(RunConfig& cfg) {
  if (const char* env = std::getenv("GRIDRUN_METRICS")) cfg.metrics_path = env;
  if (const char* env = std::getenv("GRIDRUN_STORE")) cfg.store_dir = env;
  if (const char* env = std::getenv("GRIDRUN_FIXTURE_OUT")) cfg.fixture_out = env;
}

struct Child {
  pid_t pid = -1;
  int out_fd = -1;  // read end of the child's stdout, or -1
};

Child spawn(const std::vector<std::string>& args, bool capture_stdout) {
  int fds[2] = {-1, -1};
  if (capture_stdout && ::pipe(fds) != 0) throw ConfigError("pipe failed");
  const pid_t pid = ::fork();
  if (pid < 0) throw ConfigError("fork failed");
  if (pid == 0) {
    if (capture_stdout) {
      ::dup2(fds[1], STDOUT_FILENO);
      ::close(fds[0]);
      ::close(fds[1]);
    }
    std::vector<char*> argv;
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    ::execv(argv[0], argv.data());
    std::perror("execv");
    _exit(127);
  }
  if (capture_stdout) ::close(fds[1]);
  return {pid, capture_stdout ? fds[0] : -1};
}

std::string read_line_fd(int fd) {
  std::string line;
  char c;
  while (::read(fd, &c, 1) == 1 && c != '\n') line.push_back(c);
  return line;
}

int wait_exit(pid_t pid) {
  int status = 0;
  ::waitpid(pid, &status, 0);
  if (WIFEXITED(status)) return WEXITSTATUS(status);
  return 4;  // killed
}

int run_socket(const RunConfig& cfg, const std::string& config_path) {
  if (!cfg.throttles.empty())
    throw ConfigError("throttle plans need the simulated transport");
  std::vector<std::string> cargs = {sibling_binary("gridrun-controller"), config_path,
                                    "--listen", cfg.listen};
  if (!cfg.metrics_path.empty()) cargs.insert(cargs.end(), {"--metrics", cfg.metrics_path});
  if (!cfg.store_dir.empty()) cargs.insert(cargs.end(), {"--store", cfg.store_dir});
  Child controller = spawn(cargs, true);
  const std::string hello = read_line_fd(controller.out_fd);
  if (hello.rfind("LISTENING ", 0) != 0) {
    ::close(controller.out_fd);
    wait_exit(controller.pid);
    throw ConfigError("controller failed to start: " + hello);
  }
  const std::string address = hello.substr(10);
  std::cerr << "controller listening at " << address << "\n";

  std::vector<pid_t> workers;
  for (int64_t i = 1; i <= cfg.workers; ++i) {
    std::vector<std::string> wargs = {sibling_binary("gridrun-worker"), "--controller", address,
                                      "--threads", std::to_string(cfg.threads)};
    if (!cfg.store_dir.empty())
      wargs.insert(wargs.end(), {"--store", cfg.store_dir + "/w" + std::to_string(i)});
    workers.push_back(spawn(wargs, false).pid);
  }

  // Crash plans translate to real process kills at the scheduled wall time.
  std::vector<std::thread> killers;
  for (const auto& plan : cfg.crashes)
    killers.emplace_back([pid = workers[plan.worker - 1], at = plan.at_s] {
      std::this_thread::sleep_for(std::chrono::duration<double>(at));
      ::kill(pid, SIGKILL);
    });

  const int code = wait_exit(controller.pid);
  ::close(controller.out_fd);
  for (pid_t pid : workers) wait_exit(pid);
  for (auto& t : killers) t.join();

  if (code == 0 && !cfg.fixture_out.empty()) {
    if (cfg.metrics_path.empty())
      throw ConfigError("fixture_out needs metrics_path under the socket transport");
    fixture_from_log(read_metrics_log(cfg.metrics_path)).save(cfg.fixture_out);
  }
  return code;
}

int cmd_run(const std::string& config_path) {
  RunConfig cfg = load_run_config(config_path);
  apply_env_overrides(cfg);
  if (cfg.transport == TransportKind::Socket) return run_socket(cfg, config_path);
  const RunOutcome out = run_sim(cfg);
  std::cout << "exit " << out.exit_code << ", " << out.iterations << " iterations, "
            << out.copies << " copies, " << out.rebalances << " rebalances, " << out.rewinds
            << " rewinds\n";
  return int(out.exit_code);
}

int cmd_oracle(const std::string& config_path, const std::string& out_path) {
  RunConfig cfg = load_run_config(config_path);
  const StateFixture fixture = oracle_fixture(cfg.setup);
  fixture.save(out_path);
  std::cout << fixture.entries.size() << " objects, digest " << hex64(fixture.digest()) << "\n";
  return 0;
}

int cmd_summarize(const std::string& log_path) {
  std::cout << summarize_log(read_metrics_log(log_path));
  return 0;
}

int cmd_verify(const std::string& log_path, const std::string& fixture_path) {
  const auto [ok, report] =
      verify_log(read_metrics_log(log_path), StateFixture::load(fixture_path));
  std::cout << report;
  return ok ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"gridrun: run driver and metrics toolbox"};
  cli.require_subcommand(1);
  std::string config_path, log_path, fixture_path, out_path;

  auto* run = cli.add_subcommand("run", "execute a run from a config file");
  run->add_option("config", config_path, "key = value run description")->required();
  auto* oracle = cli.add_subcommand("oracle", "write the serial reference fixture");
  oracle->add_option("config", config_path, "key = value run description")->required();
  oracle->add_option("out", out_path, "fixture output path")->required();
  auto* summarize = cli.add_subcommand("summarize", "metrics log to CSV");
  summarize->add_option("log", log_path, "metrics log (JSON lines)")->required();
  auto* verify = cli.add_subcommand("verify", "compare a log's final state to a fixture");
  verify->add_option("log", log_path, "metrics log (JSON lines)")->required();
  verify->add_option("fixture", fixture_path, "expected final-state fixture")->required();

  try {
    cli.parse(argc, argv);
    if (run->parsed()) return cmd_run(config_path);
    if (oracle->parsed()) return cmd_oracle(config_path, out_path);
    if (summarize->parsed()) return cmd_summarize(log_path);
    return cmd_verify(log_path, fixture_path);
  } catch (const CLI::ParseError& e) {
    return cli.exit(e) == 0 ? 0 : 2;
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
