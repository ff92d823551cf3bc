#pragma once

#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "gridrun/app.hpp"
#include "gridrun/apps.hpp"
#include "gridrun/common.hpp"
#include "gridrun/data_model.hpp"
#include "gridrun/job_graph.hpp"
#include "gridrun/translator.hpp"
#include "gridrun/visibility.hpp"

namespace gridrun {

/// One executed job with the versions it actually touched. Absolute ids.
struct OracleJob {
  JobSpec spec;
  std::vector<uint64_t> read_versions;   // parallel to spec.reads
  std::vector<uint64_t> write_versions;  // parallel to spec.writes
};

/// Single-threaded reference executor. Runs the same kernels over the same
/// registry as the distributed runtime, in ascending job id order, with reads
/// bound by the same visibility rule. Keeps every instance version, so the
/// final state and the full job trace are available for comparison.
class SerialOracle {
 public:
  explicit SerialOracle(const RunSetup& setup)
      : app_(make_app(setup)), registry_(app_->registry()), vis_(registry_.size()) {
    for (ObjectId o = 0; o < registry_.size(); ++o) {
      store_.put(o, 0, app_->initial_payload(o));
      latest_.push_back(0);
    }
    JobSpec main = app_->main_job();
    if (alloc_.allocate(1) != main.id) throw InvariantViolation("main job id mismatch");
    vis_.add_job(main.id, {}, retired_);
    pending_.emplace(main.id, std::move(main));
  }

  void run(uint64_t max_jobs = 50'000'000) {
    while (!pending_.empty()) {
      step();
      if (trace_.size() > max_jobs) throw InvariantViolation("job cap exceeded");
    }
  }

  bool done() const { return pending_.empty(); }

  /// Executes the lowest pending id: bind reads, assign write versions, run
  /// the kernel, then translate and enqueue any spawned batch.
  void step() {
    auto it = pending_.begin();
    JobSpec spec = std::move(it->second);
    pending_.erase(it);

    OracleJob rec;
    for (ObjectId o : spec.reads) rec.read_versions.push_back(vis_.bind_read(o, spec.id));
    for (ObjectId o : spec.writes) {
      const uint64_t v = ++latest_.at(o);
      vis_.record_write(o, v, spec.id);
      rec.write_versions.push_back(v);
    }

    JobContext ctx(registry_, store_, spec, rec.read_versions, rec.write_versions, false);
    app_->run_kernel(ctx);
    if (spec.parent) submit_batch(spec.id, ctx.spawned());

    rec.spec = std::move(spec);
    trace_.push_back(std::move(rec));
  }

  const App& app() const { return *app_; }
  const ObjectRegistry& registry() const { return registry_; }
  const std::vector<OracleJob>& trace() const { return trace_; }

  uint64_t latest_version(ObjectId o) const { return latest_.at(o); }

  std::vector<double> payload(ObjectId o) const {
    auto p = store_.get(o, latest_.at(o));
    if (!p) throw InvariantViolation("missing final instance");
    return *p;
  }

  /// (object, final version, payload hash) for every object, id order.
  std::vector<std::tuple<ObjectId, uint64_t, uint64_t>> final_entries() const {
    std::vector<std::tuple<ObjectId, uint64_t, uint64_t>> out;
    for (ObjectId o = 0; o < registry_.size(); ++o)
      out.emplace_back(o, latest_.at(o), payload_hash(payload(o)));
    return out;
  }

  /// Order-independent-free digest of the final state (entries are already
  /// in canonical object order).
  uint64_t digest() const {
    uint64_t h = fnv1a64(nullptr, 0);
    for (const auto& [o, v, ph] : final_entries()) {
      const uint64_t row[3] = {o, v, ph};
      h = fnv1a64(row, sizeof(row), h);
    }
    return h;
  }

  int64_t count_function(uint32_t function) const {
    int64_t n = 0;
    for (const auto& j : trace_) n += j.spec.function == function ? 1 : 0;
    return n;
  }

 private:
  void submit_batch(JobId parent, std::vector<JobSpec>& children) {
    if (children.empty()) return;
    const JobId base = alloc_.allocate(children.size());
    for (size_t i = 0; i < children.size(); ++i) {
      JobSpec c = std::move(children[i]);
      if (c.id != i) throw ProtocolError("batch child ids must be 0..n-1 in spawn order");
      c.id = base + i;
      std::vector<JobId> preds{parent};
      for (JobId& b : c.before) {
        if (b >= i) throw ProtocolError("before reference must name an earlier sibling");
        b += base;
        preds.push_back(b);
      }
      vis_.add_job(c.id, preds, retired_);
      pending_.emplace(c.id, std::move(c));
    }
  }

  std::shared_ptr<App> app_;
  const ObjectRegistry& registry_;
  VisibilityTracker vis_;
  InstanceStore store_;
  JobIdAllocator alloc_;
  RetiredIdSet retired_;
  std::vector<uint64_t> latest_;
  std::map<JobId, JobSpec> pending_;
  std::vector<OracleJob> trace_;
};

}  // namespace gridrun
