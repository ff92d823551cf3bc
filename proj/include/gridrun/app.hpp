#pragma once

#include <memory>
#include <string>
#include <vector>

#include "gridrun/common.hpp"
#include "gridrun/data_model.hpp"
#include "gridrun/job_graph.hpp"
#include "gridrun/translator.hpp"
#include "gridrun/wire.hpp"

namespace gridrun {

/// Everything a node needs to build the same registry, kernels, and initial
/// conditions as every other node. Shipped to workers inside RegisterReply,
/// so worker binaries take no simulation config of their own.
struct RunSetup {
  std::string app;  // registered app name
  DomainSpec domain;
  int64_t iterations = 1;    // outer loop count
  int64_t solver_cap = 10;   // max Jacobi sweeps per outer iteration
  double tolerance = 1e-12;  // residual (sum of squared updates) stop
  double dt_c = 0.1;         // dt = dt_c / (max|u| + dt_eps)
  double dt_eps = 1e-6;
  double alpha = 0.2;   // diffusion coefficient
  double drag = 0.05;   // water velocity damping per unit dt
  double flux = 0.15;   // water neighbor-exchange coefficient
  int64_t init_pattern = 0;  // 0 = deterministic bump, 1 = uniform field
  SimTime cost_per_cell = 2'000;  // modeled kernel cost, ns per cell
  SimTime cost_base = 50'000;    // modeled fixed cost per job, ns

  void encode(WireWriter& w) const {
    w.str(app);
    w.u8(uint8_t(domain.dims));
    for (int a = 0; a < kMaxDims; ++a) w.varint(uint64_t(domain.extent[a]));
    for (int a = 0; a < kMaxDims; ++a) w.varint(uint64_t(domain.partitions[a]));
    w.varint(uint64_t(domain.default_ghost_width));
    w.varint(domain.ghost_width_overrides.size());
    for (const auto& [name, gw] : domain.ghost_width_overrides) {
      w.str(name);
      w.varint(uint64_t(gw));
    }
    w.varint(uint64_t(iterations));
    w.varint(uint64_t(solver_cap));
    w.f64(tolerance);
    w.f64(dt_c);
    w.f64(dt_eps);
    w.f64(alpha);
    w.f64(drag);
    w.f64(flux);
    w.varint(uint64_t(init_pattern));
    w.varint(uint64_t(cost_per_cell));
    w.varint(uint64_t(cost_base));
  }

  static RunSetup decode(WireReader& r) {
    RunSetup s;
    s.app = r.str();
    s.domain.dims = r.u8();
    for (int a = 0; a < kMaxDims; ++a) s.domain.extent[a] = int64_t(r.varint());
    for (int a = 0; a < kMaxDims; ++a) s.domain.partitions[a] = int64_t(r.varint());
    s.domain.default_ghost_width = int64_t(r.varint());
    const uint64_t n = r.varint();
    for (uint64_t i = 0; i < n; ++i) {
      std::string name = r.str();
      s.domain.ghost_width_overrides[name] = int64_t(r.varint());
    }
    s.iterations = int64_t(r.varint());
    s.solver_cap = int64_t(r.varint());
    s.tolerance = r.f64();
    s.dt_c = r.f64();
    s.dt_eps = r.f64();
    s.alpha = r.f64();
    s.drag = r.f64();
    s.flux = r.f64();
    s.init_pattern = int64_t(r.varint());
    s.cost_per_cell = SimTime(r.varint());
    s.cost_base = SimTime(r.varint());
    return s;
  }

  std::vector<uint8_t> to_bytes() const {
    WireWriter w;
    encode(w);
    return w.buffer();
  }

  static RunSetup from_bytes(const std::vector<uint8_t>& bytes) {
    WireReader r(bytes);
    RunSetup s = decode(r);
    r.expect_done();
    return s;
  }
};

/// A bundled application: the variable registry, the job-spawning parent
/// kernels, and the compute kernels, instantiated identically on the
/// controller, every worker, and the serial reference executor.
class App {
 public:
  virtual ~App() = default;

  virtual const RunSetup& setup() const = 0;
  virtual const ObjectRegistry& registry() const = 0;

  /// The root parent job (job id 0 means "none"; main gets 1).
  virtual JobSpec main_job() const = 0;

  /// Executes one job against its context: parents spawn via ctx.spawn with
  /// batch-relative ids and before references; compute kernels gather,
  /// update, and scatter.
  virtual void run_kernel(JobContext& ctx) const = 0;

  /// Initial condition payload for version 0 of `object`; must be a pure
  /// function of the object so every creating node produces identical bytes.
  virtual std::vector<double> initial_payload(ObjectId object) const = 0;

  /// Modeled execution cost on the simulated transport's virtual clock.
  virtual SimTime modeled_cost(const JobSpec& spec) const = 0;

  /// Outer-loop index for boundary parents, -1 otherwise; drives iteration
  /// metrics and checkpoint bookkeeping.
  virtual int64_t iteration_of(const JobSpec& spec) const = 0;

  virtual std::string function_name(uint32_t function) const = 0;
};

std::shared_ptr<App> make_app(const RunSetup& setup);  // defined in apps.hpp

}  // namespace gridrun
