#pragma once

#include <map>
#include <vector>

#include "gridrun/common.hpp"
#include "gridrun/job_graph.hpp"

namespace gridrun {

/// Decides which write of an object a read binds to: the latest version whose
/// writer is ordered before the reading job. Ordering is the transitive
/// closure of declared before sets, parent spawn edges, and the data edges
/// the planner adds (copies, arrival producers). Writers outside the closure
/// (batch siblings) stay invisible even when planned earlier, which is what
/// keeps sweep batches Jacobi-parallel and ghost reads on the previous
/// exchange.
///
/// Both the controller's planner and the serial reference executor run this
/// same tracker, so binding is part of the abstraction's semantics rather
/// than a scheduling artifact.
class VisibilityTracker {
 public:
  explicit VisibilityTracker(size_t n_objects) : base_(n_objects, 0) {}

  /// Registers `id` with ordering predecessors `preds` (absolute ids; may
  /// include retired ids). Predecessors must already be registered or
  /// retired: planning runs in spawn order, so they always are.
  void add_job(JobId id, const std::vector<JobId>& preds, const RetiredIdSet& retired) {
    IdIntervalSet& anc = anc_[id];
    for (JobId p : preds) grow(anc, p, retired);
  }

  /// Adds a later-discovered edge (data arrival or inserted copy).
  void add_edge(JobId id, JobId pred, const RetiredIdSet& retired) {
    auto it = anc_.find(id);
    if (it == anc_.end()) throw InvariantViolation("visibility: unknown job");
    grow(it->second, pred, retired);
  }

  bool knows(JobId id) const { return anc_.count(id) > 0; }

  bool ordered_before(JobId pred, JobId id) const {
    auto it = anc_.find(id);
    return it != anc_.end() && it->second.contains(pred);
  }

  /// Records that `writer` produces version `version` of `object`. Versions
  /// are recorded in increasing order (the planner assigns them serially).
  void record_write(ObjectId object, uint64_t version, JobId writer) {
    auto& hist = writes_[object];
    if (!hist.empty() && hist.rbegin()->first >= version)
      throw InvariantViolation("visibility: write versions must increase");
    hist.emplace(version, writer);
  }

  JobId writer_of(ObjectId object, uint64_t version) const {
    auto it = writes_.find(object);
    if (it == writes_.end()) return 0;
    auto w = it->second.find(version);
    return w == it->second.end() ? 0 : w->second;
  }

  /// The version a read of `object` by `reader` binds to: the newest among
  /// the base version (visible to everything) and writes by jobs ordered
  /// before `reader`.
  uint64_t bind_read(ObjectId object, JobId reader) const {
    uint64_t v = base_.at(object);
    auto it = writes_.find(object);
    if (it == writes_.end()) return v;
    auto anc = anc_.find(reader);
    if (anc == anc_.end()) throw InvariantViolation("visibility: unknown reader");
    for (auto w = it->second.rbegin(); w != it->second.rend(); ++w) {
      if (w->first <= v) break;
      if (anc->second.contains(w->second)) return w->first;
    }
    return v;
  }

  /// Checkpoint truncation: writes by retired jobs become part of the base
  /// (visible to every future job) and retired closures are dropped.
  void truncate(const RetiredIdSet& retired) {
    for (auto& [object, hist] : writes_) {
      uint64_t& base = base_.at(object);
      for (auto it = hist.begin(); it != hist.end();) {
        if (retired.contains(it->second)) {
          if (it->first > base) base = it->first;
          it = hist.erase(it);
        } else {
          ++it;
        }
      }
    }
    for (auto it = anc_.begin(); it != anc_.end();)
      it = retired.contains(it->first) ? anc_.erase(it) : std::next(it);
  }

  /// Rewind: forget all closures and histories; reads bind to the manifest
  /// versions until new writes land.
  void reset(const std::vector<uint64_t>& base_versions) {
    if (base_versions.size() != base_.size())
      throw InvariantViolation("visibility: base version table size mismatch");
    base_ = base_versions;
    writes_.clear();
    anc_.clear();
  }

  uint64_t base_version(ObjectId object) const { return base_.at(object); }
  size_t tracked_jobs() const { return anc_.size(); }

 private:
  void grow(IdIntervalSet& anc, JobId pred, const RetiredIdSet& retired) {
    if (retired.contains(pred)) {
      // Every retired job is ordered before every live one: retirement only
      // happens at quiescent boundaries.
      anc.add_all(retired);
      return;
    }
    auto it = anc_.find(pred);
    if (it == anc_.end())
      throw InvariantViolation("visibility: predecessor " + std::to_string(pred) +
                               " not registered");
    anc.add(pred);
    anc.add_all(it->second);
  }

  std::vector<uint64_t> base_;                        // per object
  std::map<ObjectId, std::map<uint64_t, JobId>> writes_;  // version -> writer
  std::map<JobId, IdIntervalSet> anc_;
};

}  // namespace gridrun
