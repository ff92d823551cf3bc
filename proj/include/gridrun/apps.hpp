#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gridrun/app.hpp"
#include "gridrun/common.hpp"
#include "gridrun/data_model.hpp"
#include "gridrun/job_graph.hpp"
#include "gridrun/region.hpp"
#include "gridrun/translator.hpp"
#include "gridrun/wire.hpp"

namespace gridrun {

/// Initial condition, a pure function of the cell coordinate: a deterministic
/// pseudo-random bump by default, or a uniform field for fixed-point tests.
inline double init_cell_value(int64_t pattern, int64_t x, int64_t y, int64_t z) {
  if (pattern == 1) return 1.0;
  return 1.0 + double((x * 31 + y * 17 + z * 7) % 23) / 23.0;
}

/// Shared plumbing for the bundled apps: registry construction, batch
/// building helpers, and the uniform cost model.
class AppBase : public App {
 public:
  const RunSetup& setup() const override { return setup_; }
  const ObjectRegistry& registry() const override { return registry_; }

  JobSpec main_job() const override {
    JobSpec j;
    j.id = 1;
    j.function = 0;  // both apps use function 0 for main
    j.parent = true;
    return j;
  }

  /// Fixed overhead plus a per-cell charge over everything the job reads.
  SimTime modeled_cost(const JobSpec& spec) const override {
    int64_t cells = 0;
    for (ObjectId o : spec.reads) cells += registry_.payload_len(o);
    return setup_.cost_base + setup_.cost_per_cell * cells;
  }

 protected:
  AppBase(RunSetup setup, std::vector<VariableSpec> variables)
      : setup_(std::move(setup)), registry_(setup_.domain, std::move(variables)) {}

  /// Maps tiling regions to their object ids; each region must be exactly
  /// one tile of the variable.
  std::vector<ObjectId> tile_ids(uint32_t variable, const std::vector<Region>& regions) const {
    std::vector<ObjectId> out;
    out.reserve(regions.size());
    for (const Region& r : regions) {
      auto ids = registry_.objects_inside(variable, r);
      if (ids.size() != 1 || registry_.object(ids[0]).region.volume() != r.volume())
        throw InvariantViolation("region is not a single tile: " + r.str());
      out.push_back(ids[0]);
    }
    return out;
  }

  static std::vector<uint8_t> encode_params(std::initializer_list<int64_t> values) {
    WireWriter w;
    for (int64_t v : values) w.varint(uint64_t(v));
    return w.buffer();
  }

  static int64_t param_at(const JobSpec& spec, size_t index) {
    WireReader r(spec.params);
    uint64_t v = 0;
    for (size_t i = 0; i <= index; ++i) v = r.varint();
    return int64_t(v);
  }

  /// Batch-relative ids {first, ..., first + count - 1}.
  static std::vector<JobId> rel_range(int64_t first, int64_t count) {
    std::vector<JobId> out;
    for (int64_t i = 0; i < count; ++i) out.push_back(JobId(first + i));
    return out;
  }

  /// Children carry batch-relative ids; before references point at earlier
  /// siblings by relative id.
  static JobSpec child_job(JobId rel_id, uint32_t function, std::vector<uint8_t> params,
                           std::vector<ObjectId> reads, std::vector<ObjectId> writes,
                           std::vector<JobId> before, bool parent, bool boundary) {
    JobSpec j;
    j.id = rel_id;
    j.function = function;
    j.params = std::move(params);
    j.reads = std::move(reads);
    j.writes = std::move(writes);
    j.before = std::move(before);
    sort_unique(j.reads);
    sort_unique(j.writes);
    sort_unique(j.before);
    j.parent = parent;
    j.boundary = boundary;
    return j;
  }

  /// Sum of (neighbor - center) differences along each axis, per-axis pair.
  /// Missing neighbors at the domain edge contribute zero (reflection), so a
  /// uniform field yields an exact floating-point zero.
  double laplacian(const VariableView& u, int64_t x, int64_t y, int64_t z) const {
    const DomainSpec& d = registry_.domain();
    const double c = u.at(x, y, z);
    int64_t p[3] = {x, y, z};
    double acc = 0.0;
    for (int a = 0; a < d.dims; ++a) {
      if (p[a] > 0) {
        p[a] -= 1;
        acc += u.at(p[0], p[1], p[2]) - c;
        p[a] += 1;
      }
      if (p[a] + 1 < d.extent[a]) {
        p[a] += 1;
        acc += u.at(p[0], p[1], p[2]) - c;
        p[a] -= 1;
      }
    }
    return acc;
  }

  std::vector<double> grid_initial(ObjectId object) const {
    const Region& r = registry_.object(object).region;
    std::vector<double> out;
    out.reserve(size_t(r.volume()));
    for (int64_t z = r.lo[2]; z < r.hi[2]; ++z)
      for (int64_t y = r.lo[1]; y < r.hi[1]; ++y)
        for (int64_t x = r.lo[0]; x < r.hi[0]; ++x)
          out.push_back(init_cell_value(setup_.init_pattern, x, y, z));
    return out;
  }

  RunSetup setup_;
  ObjectRegistry registry_;
};

namespace water {
enum Function : uint32_t { Main = 0, ForLoop = 1, AdvanceVelocity = 2, AdvanceWater = 3 };
}

/// 1-d two-partition wave/transport toy: each iteration damps the velocity
/// field pointwise, then applies a neighbor-exchange step that needs one
/// ghost cell from each side.
class Water1DApp final : public AppBase {
 public:
  explicit Water1DApp(RunSetup setup)
      : AppBase(std::move(setup), {{"v", VariableKind::Grid, -1}}) {
    const DomainSpec& d = setup_.domain;
    if (d.dims != 1) throw ConfigError("water1d: domain must be 1-d");
    if (d.partition_count() != 2) throw ConfigError("water1d: exactly 2 partitions required");
    if (registry_.grid_ghost_width(0) < 1)
      throw ConfigError("water1d: ghost width must be at least 1");
    for (const auto& index : enumerate_partitions(d)) {
      auto dec = decompose_partition(d, index, registry_.grid_ghost_width(0));
      owned_.push_back(tile_ids(0, dec.owned));
      touched_.push_back(tile_ids(0, dec.touched));
    }
  }

  void run_kernel(JobContext& ctx) const override {
    switch (ctx.function()) {
      case water::Main:
        ctx.spawn(child_job(0, water::ForLoop, encode_params({0}), {}, {}, {}, true, true));
        return;
      case water::ForLoop: {
        const int64_t k = int64_t(ctx.params().varint());
        if (k >= setup_.iterations) return;
        ctx.spawn(child_job(0, water::AdvanceVelocity, {}, owned_[0], owned_[0], {}, false, false));
        ctx.spawn(child_job(1, water::AdvanceVelocity, {}, owned_[1], owned_[1], {}, false, false));
        ctx.spawn(
            child_job(2, water::AdvanceWater, {}, touched_[0], owned_[0], {0, 1}, false, false));
        ctx.spawn(
            child_job(3, water::AdvanceWater, {}, touched_[1], owned_[1], {0, 1}, false, false));
        ctx.spawn(child_job(4, water::ForLoop, encode_params({k + 1}), {}, {}, {2, 3}, true, true));
        return;
      }
      case water::AdvanceVelocity: {
        VariableView v = ctx.gather("v");
        for (double& c : v.data) c *= 1.0 - setup_.drag;
        ctx.scatter("v", v);
        return;
      }
      case water::AdvanceWater: {
        const VariableView in = ctx.gather("v");
        VariableView out = ctx.make_write_view("v");
        const int64_t ex = registry_.domain().extent[0];
        for (int64_t x = out.box.lo[0]; x < out.box.hi[0]; ++x) {
          const double c = in.at(x);
          const double lv = x > 0 ? in.at(x - 1) : c;
          const double rv = x + 1 < ex ? in.at(x + 1) : c;
          out.at(x) = c + setup_.flux * ((lv - c) + (rv - c));
        }
        ctx.scatter("v", out);
        return;
      }
      default:
        throw ProtocolError("water1d: unknown function " + std::to_string(ctx.function()));
    }
  }

  std::vector<double> initial_payload(ObjectId object) const override {
    return grid_initial(object);
  }

  int64_t iteration_of(const JobSpec& spec) const override {
    return spec.function == water::ForLoop ? param_at(spec, 0) : -1;
  }

  std::string function_name(uint32_t function) const override {
    switch (function) {
      case water::Main: return "Main";
      case water::ForLoop: return "ForLoop";
      case water::AdvanceVelocity: return "AdvanceVelocity";
      case water::AdvanceWater: return "AdvanceWater";
      default: return "fn" + std::to_string(function);
    }
  }

 private:
  std::vector<std::vector<ObjectId>> owned_;    // per partition, v tiles
  std::vector<std::vector<ObjectId>> touched_;  // per partition, incl. ghosts
};

namespace diffusion {
enum Function : uint32_t {
  Main = 0,
  Iter = 1,
  LocalMax = 2,
  ReduceDt = 3,
  Stencil = 4,
  SolveLoop = 5,
  Sweep = 6,
  ReduceRes = 7,
};
}

/// Implicit diffusion solved with Jacobi sweeps. Each outer iteration picks a
/// step size from a max-reduction, builds the explicit half of a
/// Crank-Nicolson step, then iterates sweeps until the update norm drops
/// under the tolerance or the sweep cap is hit.
class Diffusion2DApp final : public AppBase {
 public:
  explicit Diffusion2DApp(RunSetup setup)
      : AppBase(std::move(setup), {{"u", VariableKind::Grid, -1},
                                   {"rhs", VariableKind::Grid, 0},
                                   {"lm", VariableKind::PartitionScalar, -1},
                                   {"res", VariableKind::PartitionScalar, -1},
                                   {"dt", VariableKind::GlobalScalar, -1},
                                   {"residual", VariableKind::GlobalScalar, -1}}) {
    const DomainSpec& d = setup_.domain;
    if (registry_.grid_ghost_width(0) < 1)
      throw ConfigError("diffusion2d: ghost width must be at least 1");
    const uint32_t var_u = 0, var_rhs = 1, var_lm = 2, var_res = 3;
    n_parts_ = d.partition_count();
    for (const auto& index : enumerate_partitions(d)) {
      auto dec = decompose_partition(d, index, registry_.grid_ghost_width(0));
      owned_u_.push_back(tile_ids(var_u, dec.owned));
      touched_u_.push_back(tile_ids(var_u, dec.touched));
      auto flat = decompose_partition(d, index, 0);
      rhs_.push_back(tile_ids(var_rhs, flat.owned).at(0));
      const int64_t p = partition_linear_index(d, index);
      lm_.push_back(registry_.partition_scalar(var_lm, p));
      res_.push_back(registry_.partition_scalar(var_res, p));
    }
    dt_ = registry_.global_scalar(registry_.variable_index("dt"));
    residual_ = registry_.global_scalar(registry_.variable_index("residual"));
  }

  void run_kernel(JobContext& ctx) const override {
    switch (ctx.function()) {
      case diffusion::Main:
        ctx.spawn(child_job(0, diffusion::Iter, encode_params({0}), {}, {}, {}, true, true));
        return;
      case diffusion::Iter: {
        const int64_t k = int64_t(ctx.params().varint());
        if (k >= setup_.iterations) return;
        spawn_outer(ctx, k);
        return;
      }
      case diffusion::SolveLoop: {
        WireReader r = ctx.params();
        const int64_t k = int64_t(r.varint());
        const int64_t j = int64_t(r.varint());
        bool stop = j >= setup_.solver_cap;
        if (!stop && j > 0) stop = ctx.read_scalar("residual") <= setup_.tolerance;
        if (stop)
          ctx.spawn(
              child_job(0, diffusion::Iter, encode_params({k + 1}), {}, {}, {}, true, true));
        else
          spawn_sweep(ctx, k, j);
        return;
      }
      case diffusion::LocalMax: {
        const VariableView u = ctx.gather("u");
        double m = 0.0;
        for (double c : u.data) m = std::max(m, std::abs(c));
        ctx.write_scalar("lm", m);
        return;
      }
      case diffusion::ReduceDt: {
        double m = 0.0;
        for (double v : ctx.read_scalars("lm")) m = std::max(m, v);
        ctx.write_scalar("dt", setup_.dt_c / (m + setup_.dt_eps));
        return;
      }
      case diffusion::Stencil: {
        const VariableView u = ctx.gather("u");
        const double coef = 0.5 * setup_.alpha * ctx.read_scalar("dt");
        VariableView out = ctx.make_write_view("rhs");
        for (int64_t z = out.box.lo[2]; z < out.box.hi[2]; ++z)
          for (int64_t y = out.box.lo[1]; y < out.box.hi[1]; ++y)
            for (int64_t x = out.box.lo[0]; x < out.box.hi[0]; ++x)
              out.at(x, y, z) = u.at(x, y, z) + coef * laplacian(u, x, y, z);
        ctx.scatter("rhs", out);
        return;
      }
      case diffusion::Sweep: {
        const VariableView u = ctx.gather("u");
        const VariableView rhs = ctx.gather("rhs");
        const double ap = 0.5 * setup_.alpha * ctx.read_scalar("dt");
        const double denom = 1.0 + 2.0 * registry_.domain().dims * ap;
        VariableView out = ctx.make_write_view("u");
        double res = 0.0;
        for (int64_t z = out.box.lo[2]; z < out.box.hi[2]; ++z)
          for (int64_t y = out.box.lo[1]; y < out.box.hi[1]; ++y)
            for (int64_t x = out.box.lo[0]; x < out.box.hi[0]; ++x) {
              const double c = u.at(x, y, z);
              const double upd = ((rhs.at(x, y, z) - c) + ap * laplacian(u, x, y, z)) / denom;
              out.at(x, y, z) = c + upd;
              res += upd * upd;
            }
        ctx.scatter("u", out);
        ctx.write_scalar("res", res);
        return;
      }
      case diffusion::ReduceRes: {
        double s = 0.0;
        for (double v : ctx.read_scalars("res")) s += v;
        ctx.write_scalar("residual", s);
        return;
      }
      default:
        throw ProtocolError("diffusion2d: unknown function " + std::to_string(ctx.function()));
    }
  }

  std::vector<double> initial_payload(ObjectId object) const override {
    if (registry_.object(object).variable == 0) return grid_initial(object);
    return std::vector<double>(size_t(registry_.payload_len(object)), 0.0);
  }

  int64_t iteration_of(const JobSpec& spec) const override {
    return spec.function == diffusion::Iter ? param_at(spec, 0) : -1;
  }

  std::string function_name(uint32_t function) const override {
    switch (function) {
      case diffusion::Main: return "Main";
      case diffusion::Iter: return "Iter";
      case diffusion::LocalMax: return "LocalMax";
      case diffusion::ReduceDt: return "ReduceDt";
      case diffusion::Stencil: return "Stencil";
      case diffusion::SolveLoop: return "SolveLoop";
      case diffusion::Sweep: return "Sweep";
      case diffusion::ReduceRes: return "ReduceRes";
      default: return "fn" + std::to_string(function);
    }
  }

 private:
  /// One outer iteration: per-partition max, dt reduction, explicit-half
  /// stencil, then the first solver-loop parent gated on every stencil.
  void spawn_outer(JobContext& ctx, int64_t k) const {
    const int64_t P = n_parts_;
    for (int64_t p = 0; p < P; ++p)
      ctx.spawn(child_job(JobId(p), diffusion::LocalMax, {}, owned_u_[size_t(p)],
                          {lm_[size_t(p)]}, {}, false, false));
    ctx.spawn(
        child_job(JobId(P), diffusion::ReduceDt, {}, lm_, {dt_}, rel_range(0, P), false, false));
    for (int64_t p = 0; p < P; ++p) {
      std::vector<ObjectId> reads = touched_u_[size_t(p)];
      reads.push_back(dt_);
      ctx.spawn(child_job(JobId(P + 1 + p), diffusion::Stencil, {}, std::move(reads),
                          {rhs_[size_t(p)]}, {JobId(P)}, false, false));
    }
    ctx.spawn(child_job(JobId(2 * P + 1), diffusion::SolveLoop, encode_params({k, 0}), {}, {},
                        rel_range(P + 1, P), true, false));
  }

  /// One Jacobi sweep: per-partition updates, the residual reduction, and
  /// the next solver-loop parent which reads the fresh residual.
  void spawn_sweep(JobContext& ctx, int64_t k, int64_t j) const {
    const int64_t P = n_parts_;
    for (int64_t p = 0; p < P; ++p) {
      std::vector<ObjectId> reads = touched_u_[size_t(p)];
      reads.push_back(rhs_[size_t(p)]);
      reads.push_back(dt_);
      std::vector<ObjectId> writes = owned_u_[size_t(p)];
      writes.push_back(res_[size_t(p)]);
      ctx.spawn(child_job(JobId(p), diffusion::Sweep, {}, std::move(reads), std::move(writes), {},
                          false, false));
    }
    ctx.spawn(child_job(JobId(P), diffusion::ReduceRes, {}, res_, {residual_}, rel_range(0, P),
                        false, false));
    ctx.spawn(child_job(JobId(P + 1), diffusion::SolveLoop, encode_params({k, j + 1}),
                        {residual_}, {}, {JobId(P)}, true, false));
  }

  int64_t n_parts_ = 0;
  std::vector<std::vector<ObjectId>> owned_u_;
  std::vector<std::vector<ObjectId>> touched_u_;
  std::vector<ObjectId> rhs_;  // per partition (ghost width 0: one tile each)
  std::vector<ObjectId> lm_;
  std::vector<ObjectId> res_;
  ObjectId dt_ = 0;
  ObjectId residual_ = 0;
};

inline std::shared_ptr<App> make_app(const RunSetup& setup) {
  if (setup.app == "water1d") return std::make_shared<Water1DApp>(setup);
  if (setup.app == "diffusion2d") return std::make_shared<Diffusion2DApp>(setup);
  throw ConfigError("unknown app: " + setup.app);
}

}  // namespace gridrun
