#pragma once

#include <algorithm>
#include <map>
#include <string>
#include <vector>

#include "gridrun/common.hpp"

namespace gridrun {

/// A schedulable unit. Read and write sets are logical object ids; the before
/// set orders this job after specific earlier jobs. Parents spawn a batch of
/// children when they execute instead of touching data. Boundary parents mark
/// safe checkpoint frontiers.
struct JobSpec {
  JobId id = 0;
  uint32_t function = 0;
  std::vector<uint8_t> params;
  std::vector<ObjectId> reads;   // sorted, unique
  std::vector<ObjectId> writes;  // sorted, unique
  std::vector<JobId> before;     // sorted, unique
  bool parent = false;
  bool boundary = false;

  friend bool operator==(const JobSpec& a, const JobSpec& b) {
    return a.id == b.id && a.function == b.function && a.params == b.params &&
           a.reads == b.reads && a.writes == b.writes && a.before == b.before &&
           a.parent == b.parent && a.boundary == b.boundary;
  }
};

inline void sort_unique(std::vector<uint64_t>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

enum class JobStatus : uint8_t { Spawned, Scheduled, Running, Done };

inline const char* to_string(JobStatus s) {
  switch (s) {
    case JobStatus::Spawned: return "spawned";
    case JobStatus::Scheduled: return "scheduled";
    case JobStatus::Running: return "running";
    case JobStatus::Done: return "done";
  }
  return "?";
}

/// Set of job ids stored as disjoint merged intervals. Completed jobs are
/// truncated from the graph at checkpoint commits; their ids land here so
/// later before-references can still be validated and treated as satisfied.
class RetiredIdSet {
 public:
  bool contains(JobId id) const {
    auto it = intervals_.upper_bound(id);
    if (it == intervals_.begin()) return false;
    --it;
    return id < it->second;
  }

  void add(JobId id) { add_range(id, id + 1); }

  /// Inserts [lo, hi), merging with adjacent and overlapping intervals.
  void add_range(JobId lo, JobId hi) {
    if (lo >= hi) return;
    auto it = intervals_.upper_bound(lo);
    if (it != intervals_.begin()) {
      auto prev = std::prev(it);
      if (prev->second >= lo) {
        lo = prev->first;
        hi = std::max(hi, prev->second);
        it = intervals_.erase(prev);
      }
    }
    while (it != intervals_.end() && it->first <= hi) {
      hi = std::max(hi, it->second);
      it = intervals_.erase(it);
    }
    intervals_[lo] = hi;
  }

  void add_all(const RetiredIdSet& other) {
    for (const auto& [lo, hi] : other.intervals_) add_range(lo, hi);
  }

  size_t interval_count() const { return intervals_.size(); }
  const std::map<JobId, JobId>& intervals() const { return intervals_; }
  void clear() { intervals_.clear(); }

 private:
  std::map<JobId, JobId> intervals_;  // begin -> end, disjoint, non-adjacent
};

/// Ancestor closures in the visibility tracker reuse the same interval
/// representation: batches occupy contiguous id blocks, so closures stay a
/// handful of intervals regardless of run length.
using IdIntervalSet = RetiredIdSet;

/// Hands out contiguous id blocks. Job 0 is reserved as "no job".
class JobIdAllocator {
 public:
  explicit JobIdAllocator(JobId first = 1) : next_(first) {}

  JobId allocate(uint64_t count) {
    JobId base = next_;
    next_ += count;
    return base;
  }

  JobId next() const { return next_; }
  void reset(JobId next) { next_ = next; }

 private:
  JobId next_;
};

/// Controller-side job bookkeeping. Tracks status, assignment, and the
/// dependency wavefront: a job is runnable once every before-reference is
/// done or retired. Jobs transition spawned -> scheduled when assigned,
/// scheduled -> running when the last dependency clears, running -> done on
/// the completion ack.
class JobGraph {
 public:
  struct Record {
    JobSpec spec;
    JobStatus status = JobStatus::Spawned;
    WorkerId assigned = kControllerId;  // meaningful once scheduled
    uint32_t unmet = 0;                 // before-refs not yet done or retired
    std::vector<JobId> dependents;      // jobs whose before set names this one
  };

  /// Validates and inserts a spawned job. Before-references must name a job
  /// that exists, already retired ids, or earlier ids within this same call's
  /// batch (the caller spawns in id order).
  void spawn(const JobSpec& spec) {
    if (spec.id == 0) throw InvariantViolation("job id 0 is reserved");
    if (jobs_.count(spec.id) || retired_.contains(spec.id))
      throw InvariantViolation("duplicate job id " + std::to_string(spec.id));
    Record rec;
    rec.spec = spec;
    for (JobId dep : spec.before) {
      if (dep == spec.id) throw InvariantViolation("job depends on itself");
      if (retired_.contains(dep)) continue;
      auto it = jobs_.find(dep);
      if (it == jobs_.end())
        throw InvariantViolation("job " + std::to_string(spec.id) +
                                 " depends on unknown job " + std::to_string(dep));
      if (it->second.status != JobStatus::Done) {
        it->second.dependents.push_back(spec.id);
        ++rec.unmet;
      }
    }
    jobs_.emplace(spec.id, std::move(rec));
  }

  bool contains(JobId id) const { return jobs_.count(id) > 0; }
  bool retired(JobId id) const { return retired_.contains(id); }
  const RetiredIdSet& retired_set() const { return retired_; }

  Record& record(JobId id) {
    auto it = jobs_.find(id);
    if (it == jobs_.end()) throw InvariantViolation("unknown job " + std::to_string(id));
    return it->second;
  }

  const Record& record(JobId id) const { return const_cast<JobGraph*>(this)->record(id); }

  void mark_scheduled(JobId id, WorkerId w) {
    Record& r = record(id);
    if (r.status != JobStatus::Spawned)
      throw InvariantViolation("job " + std::to_string(id) + " scheduled twice");
    r.status = r.unmet == 0 ? JobStatus::Running : JobStatus::Scheduled;
    r.assigned = w;
  }

  /// Marks `id` done and returns the dependents that just became runnable.
  std::vector<JobId> mark_done(JobId id) {
    Record& r = record(id);
    if (r.status == JobStatus::Done)
      throw InvariantViolation("job " + std::to_string(id) + " completed twice");
    r.status = JobStatus::Done;
    std::vector<JobId> now_runnable;
    for (JobId dep : r.dependents) {
      auto it = jobs_.find(dep);
      if (it == jobs_.end()) continue;
      Record& d = it->second;
      if (--d.unmet == 0) {
        if (d.status == JobStatus::Scheduled) d.status = JobStatus::Running;
        now_runnable.push_back(dep);
      }
    }
    return now_runnable;
  }

  /// Drops every done job and retires its id. Called at checkpoint commits
  /// to keep the graph bounded.
  size_t truncate_done() {
    size_t n = 0;
    for (auto it = jobs_.begin(); it != jobs_.end();) {
      if (it->second.status == JobStatus::Done) {
        retired_.add(it->first);
        it = jobs_.erase(it);
        ++n;
      } else {
        ++it;
      }
    }
    return n;
  }

  /// Rewind support: forget every job (completed ids stay retired only if
  /// previously truncated) and retire all ids below `next_id` so re-spawned
  /// parents may reference pre-crash jobs.
  void reset_for_rewind(JobId next_id) {
    jobs_.clear();
    retired_.add_range(1, next_id);
  }

  size_t size() const { return jobs_.size(); }

  size_t count(JobStatus s) const {
    size_t n = 0;
    for (const auto& [_, r] : jobs_) n += r.status == s;
    return n;
  }

  /// Jobs not yet done, in id order.
  std::vector<JobId> pending() const {
    std::vector<JobId> out;
    for (const auto& [id, r] : jobs_)
      if (r.status != JobStatus::Done) out.push_back(id);
    return out;
  }

  /// True when every pending job is a held (never dispatched) boundary parent
  /// with all dependencies met: the frontier is a clean cut between
  /// iterations, and re-running exactly those parents resumes the loop.
  bool at_boundary() const {
    bool any = false;
    for (const auto& [_, r] : jobs_) {
      if (r.status == JobStatus::Done) continue;
      if (!(r.spec.parent && r.spec.boundary && r.status == JobStatus::Spawned && r.unmet == 0))
        return false;
      any = true;
    }
    return any;
  }

  /// Pending boundary parents still in Spawned state (held at dispatch).
  std::vector<JobId> boundary_parents() const {
    std::vector<JobId> out;
    for (const auto& [id, r] : jobs_)
      if (r.status == JobStatus::Spawned && r.spec.parent && r.spec.boundary) out.push_back(id);
    return out;
  }

  const std::map<JobId, Record>& all() const { return jobs_; }

 private:
  std::map<JobId, Record> jobs_;
  RetiredIdSet retired_;
};

}  // namespace gridrun
