#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

#include "gridrun/job_graph.hpp"
#include "gridrun/visibility.hpp"

using namespace gridrun;

namespace {

JobSpec spec(JobId id, std::vector<JobId> before = {}, bool parent = false,
             bool boundary = false) {
  JobSpec s;
  s.id = id;
  s.before = std::move(before);
  s.parent = parent;
  s.boundary = boundary;
  return s;
}

}  // namespace

TEST_CASE("retired id set merges intervals") {
  RetiredIdSet s;
  s.add(5);
  s.add(7);
  REQUIRE(s.interval_count() == 2);
  s.add(6);  // bridges [5,6) and [7,8)
  REQUIRE(s.interval_count() == 1);
  REQUIRE(s.contains(5));
  REQUIRE(s.contains(7));
  REQUIRE(!s.contains(4));
  REQUIRE(!s.contains(8));
  s.add_range(1, 100);
  REQUIRE(s.interval_count() == 1);
  s.add_range(200, 300);
  s.add_range(150, 250);
  REQUIRE(s.interval_count() == 2);
  REQUIRE(s.contains(299));
  REQUIRE(!s.contains(300));

  // Randomized cross-check against a reference set.
  std::mt19937_64 rng(3);
  RetiredIdSet t;
  std::set<JobId> ref;
  for (int i = 0; i < 2000; ++i) {
    const JobId lo = rng() % 500 + 1;
    const JobId hi = lo + rng() % 20;
    t.add_range(lo, hi);
    for (JobId v = lo; v < hi; ++v) ref.insert(v);
    const JobId probe = rng() % 550;
    REQUIRE(t.contains(probe) == (ref.count(probe) > 0));
  }
}

TEST_CASE("graph tracks the ready wavefront") {
  JobGraph g;
  g.spawn(spec(1));
  g.spawn(spec(2, {1}));
  g.spawn(spec(3, {1, 2}));
  g.mark_scheduled(1, 1);
  g.mark_scheduled(2, 1);
  g.mark_scheduled(3, 2);
  REQUIRE(g.record(1).status == JobStatus::Running);   // no deps
  REQUIRE(g.record(2).status == JobStatus::Scheduled); // blocked on 1
  auto ready = g.mark_done(1);
  REQUIRE(ready == std::vector<JobId>{2});
  ready = g.mark_done(2);
  REQUIRE(ready == std::vector<JobId>{3});
  REQUIRE(g.record(3).status == JobStatus::Running);
  g.mark_done(3);
  REQUIRE(g.pending().empty());
}

TEST_CASE("graph rejects malformed spawns and double completion") {
  JobGraph g;
  REQUIRE_THROWS_AS(g.spawn(spec(0)), InvariantViolation);
  g.spawn(spec(1));
  REQUIRE_THROWS_AS(g.spawn(spec(1)), InvariantViolation);       // duplicate
  REQUIRE_THROWS_AS(g.spawn(spec(4, {4})), InvariantViolation);  // self edge
  REQUIRE_THROWS_AS(g.spawn(spec(4, {99})), InvariantViolation); // unknown dep
  g.mark_scheduled(1, 1);
  g.mark_done(1);
  REQUIRE_THROWS_AS(g.mark_done(1), InvariantViolation);
}

TEST_CASE("truncation retires done jobs and satisfies later references") {
  JobGraph g;
  g.spawn(spec(1));
  g.spawn(spec(2, {1}));
  g.mark_scheduled(1, 1);
  g.mark_scheduled(2, 1);
  g.mark_done(1);
  g.mark_done(2);
  REQUIRE(g.truncate_done() == 2);
  REQUIRE(g.size() == 0);
  REQUIRE(g.retired(1));
  REQUIRE(g.retired(2));
  // A reference to a truncated job counts as met immediately.
  g.spawn(spec(3, {1, 2}));
  g.mark_scheduled(3, 2);
  REQUIRE(g.record(3).status == JobStatus::Running);
  // Reusing a retired id is a violation.
  REQUIRE_THROWS_AS(g.spawn(spec(2)), InvariantViolation);
}

TEST_CASE("boundary detection requires a clean frontier") {
  JobGraph g;
  g.spawn(spec(1, {}, true, true));
  REQUIRE(g.at_boundary());  // a held runnable boundary parent
  g.spawn(spec(2, {}));      // plain work pending
  REQUIRE(!g.at_boundary());
  g.mark_scheduled(2, 1);
  g.mark_done(2);
  REQUIRE(g.at_boundary());
  g.spawn(spec(3, {1}, true, true));  // blocked boundary parent
  REQUIRE(!g.at_boundary());
  JobGraph empty;
  REQUIRE(!empty.at_boundary());  // nothing pending is not a boundary
}

TEST_CASE("rewind reset retires every allocated id") {
  JobGraph g;
  JobIdAllocator alloc;
  const JobId a = alloc.allocate(3);
  for (JobId id = a; id < a + 3; ++id) g.spawn(spec(id));
  g.reset_for_rewind(alloc.next());
  REQUIRE(g.size() == 0);
  for (JobId id = 1; id < alloc.next(); ++id) REQUIRE(g.retired(id));
  // Stale completions for pre-rewind ids are recognizable as retired.
  REQUIRE(!g.contains(a));
}

TEST_CASE("visibility binds reads to the newest visible write") {
  RetiredIdSet retired;
  VisibilityTracker vis(2);
  // Parent 1 spawns batch {2, 3} (siblings), then 4 ordered after both.
  vis.add_job(1, {}, retired);
  vis.record_write(0, 1, 1);
  vis.add_job(2, {1}, retired);
  vis.add_job(3, {1}, retired);
  vis.record_write(0, 2, 2);  // sibling write, planned before 3 runs
  REQUIRE(vis.bind_read(0, 3) == 1);  // sibling invisible: reads parent's write
  vis.add_job(4, {2, 3}, retired);
  REQUIRE(vis.bind_read(0, 4) == 2);  // successor sees the newest write
  REQUIRE(vis.bind_read(1, 4) == 0);  // untouched object binds to base
}

TEST_CASE("visibility respects transitive closure, not planning order") {
  RetiredIdSet retired;
  VisibilityTracker vis(1);
  vis.add_job(1, {}, retired);
  vis.add_job(2, {}, retired);  // concurrent with 1
  vis.record_write(0, 1, 1);
  vis.record_write(0, 2, 2);
  vis.add_job(3, {1}, retired);
  REQUIRE(vis.bind_read(0, 3) == 1);  // 2's write exists but is not ordered
  vis.add_edge(3, 2, retired);
  REQUIRE(vis.bind_read(0, 3) == 2);  // data edge added later changes binding
  REQUIRE(vis.ordered_before(1, 3));
  REQUIRE(vis.ordered_before(2, 3));
  REQUIRE(!vis.ordered_before(3, 1));
}

TEST_CASE("visibility truncation folds retired writes into the base") {
  RetiredIdSet retired;
  VisibilityTracker vis(1);
  vis.add_job(1, {}, retired);
  vis.record_write(0, 1, 1);
  vis.add_job(2, {1}, retired);
  vis.record_write(0, 2, 2);
  retired.add(1);
  retired.add(2);
  vis.truncate(retired);
  REQUIRE(vis.base_version(0) == 2);
  REQUIRE(vis.tracked_jobs() == 0);
  // A brand-new job with no ancestry sees the folded base.
  vis.add_job(3, {}, retired);
  REQUIRE(vis.bind_read(0, 3) == 2);
}

TEST_CASE("visibility write versions must increase") {
  VisibilityTracker vis(1);
  RetiredIdSet retired;
  vis.add_job(1, {}, retired);
  vis.record_write(0, 2, 1);
  REQUIRE_THROWS_AS(vis.record_write(0, 2, 1), InvariantViolation);
  REQUIRE_THROWS_AS(vis.record_write(0, 1, 1), InvariantViolation);
}

TEST_CASE("closures stay compact across long parent chains") {
  // Batches are contiguous id blocks, so ancestor sets merge into a handful
  // of intervals instead of growing linearly with run length.
  RetiredIdSet retired;
  VisibilityTracker vis(1);
  JobIdAllocator alloc;
  JobId parent = alloc.allocate(1);
  vis.add_job(parent, {}, retired);
  for (int iter = 0; iter < 50; ++iter) {
    const JobId base = alloc.allocate(8);
    std::vector<JobId> batch;
    for (int i = 0; i < 8; ++i) {
      vis.add_job(base + i, {parent}, retired);
      batch.push_back(base + i);
    }
    const JobId next_parent = alloc.allocate(1);
    vis.add_job(next_parent, batch, retired);
    parent = next_parent;
  }
  REQUIRE(vis.tracked_jobs() == size_t(1 + 50 * 9));
  // The deepest job's closure covers everything before it: binding still works.
  vis.record_write(0, 7, 1);
  REQUIRE(vis.bind_read(0, parent) == 7);
}
