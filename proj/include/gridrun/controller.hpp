#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "gridrun/app.hpp"
#include "gridrun/apps.hpp"
#include "gridrun/common.hpp"
#include "gridrun/data_model.hpp"
#include "gridrun/job_graph.hpp"
#include "gridrun/message.hpp"
#include "gridrun/metrics.hpp"
#include "gridrun/run_config.hpp"
#include "gridrun/shard_store.hpp"
#include "gridrun/transport.hpp"
#include "gridrun/visibility.hpp"

namespace gridrun {

struct ControllerOptions {
  RunSetup setup;
  uint32_t workers = 1;
  int64_t checkpoint_interval = 0;  // outer iterations between checkpoints; 0 = off
  StragglerParams straggler;
  std::string store_dir;            // manifest directory; empty disables rewind
  MetricsLogger* metrics = nullptr; // optional, owned by the caller
};

/// Central scheduler. Holds the job graph and the visibility tracker, plans
/// every spawned job (assignment, read binding, version allocation, copy
/// insertion), and drives checkpoints, rewinds, and straggler rebalancing.
/// All decisions use ordered containers so a run is a pure function of the
/// config and the transport's delivery order.
class ControllerCore : public Node {
 public:
  ControllerCore(Endpoint& ep, ControllerOptions opt)
      : ep_(ep), opt_(std::move(opt)), app_(make_app(opt_.setup)), reg_(app_->registry()) {
    if (opt_.workers < 1) throw ConfigError("need at least one worker");
    for (const auto& index : snake_partition_order(reg_.domain()))
      snake_linear_.push_back(partition_linear_index(reg_.domain(), index));
    part_owner_.assign(snake_linear_.size(), 0);
    if (!opt_.store_dir.empty()) manifests_ = std::make_unique<ManifestStore>(opt_.store_dir);
  }

  bool terminated() const { return terminated_; }
  uint32_t exit_code() const { return exit_code_; }
  uint64_t iteration() const { return iteration_; }
  size_t copy_count() const { return copies_planned_; }
  size_t rebalance_count() const { return rebalances_; }
  size_t rewind_count() const { return rewinds_; }
  uint64_t last_checkpoint() const { return last_committed_ckpt_; }
  const std::map<ObjectId, std::pair<uint64_t, uint64_t>>& final_rows() const {
    return final_rows_;
  }

  void on_message(WorkerId from, MessageTag tag, const std::vector<uint8_t>& body) override {
    if (terminated_) return;
    auto w = workers_.find(from);
    if (w != workers_.end() && w->second.alive) w->second.last_seen = ep_.now();
    switch (tag) {
      case MessageTag::RegisterWorker:
        handle_register(from, decode_message<RegisterRequest>(body));
        return;
      case MessageTag::SpawnBatch:
        handle_batch(from, decode_message<SpawnBatchMsg>(body));
        return;
      case MessageTag::JobDone:
        handle_done(from, decode_message<JobDoneMsg>(body));
        return;
      case MessageTag::Heartbeat:
        return;  // last_seen is already refreshed above
      case MessageTag::ProfileReport:
        handle_profile(from, decode_message<ProfileReportMsg>(body));
        return;
      case MessageTag::SaveShard:  // ack direction: workers answer save requests
        handle_save_ack(from, decode_message<SaveShardAck>(body));
        return;
      case MessageTag::RestoreShard:
        handle_restore_ack(from, decode_message<RestoreShardAck>(body));
        return;
      default:
        throw ProtocolError("controller: unexpected tag " + std::to_string(uint16_t(tag)));
    }
  }

 private:
  struct WorkerInfo {
    std::string address;
    uint32_t threads = 1;
    bool alive = false;
    SimTime last_seen = 0;
  };

  struct CopyJob {
    ObjectId object = 0;
    uint64_t version = 0;
    WorkerId src = 0;
    WorkerId dst = 0;
    bool done = false;
  };

  void note(const std::string& event, json fields = json::object()) {
    if (opt_.metrics) opt_.metrics->log(ep_.now(), event, std::move(fields));
  }

  std::vector<WorkerId> alive_workers() const {
    std::vector<WorkerId> out;
    for (const auto& [id, info] : workers_)
      if (info.alive) out.push_back(id);
    return out;
  }

  // ---- registration -------------------------------------------------------

  void handle_register(WorkerId from, const RegisterRequest& req) {
    if (running_) throw ProtocolError("registration after the run started");
    for (WorkerId a : reg_order_)
      if (a == from) throw ProtocolError("duplicate registration");
    reg_order_.push_back(from);
    pending_reg_[from] = req;
    if (reg_order_.size() < opt_.workers) return;
    // Worker ids are 1..N in ascending transport-address order; under the
    // simulated transport addresses already are 1..N, so ids match nodes.
    std::vector<WorkerId> addrs = reg_order_;
    std::sort(addrs.begin(), addrs.end());
    RegisterReply reply;
    reply.setup = opt_.setup.to_bytes();
    reply.heartbeat_period = opt_.straggler.heartbeat_period;
    reply.profile_window = opt_.straggler.window;
    for (WorkerId i = 0; i < addrs.size(); ++i) {
      const WorkerId id = i + 1;
      const RegisterRequest& r = pending_reg_.at(addrs[i]);
      reply.peers.emplace_back(id, r.listen_address);
      WorkerInfo info;
      info.address = r.listen_address;
      info.threads = r.threads;
      info.alive = true;
      info.last_seen = ep_.now();
      workers_[id] = info;
    }
    for (WorkerId i = 0; i < addrs.size(); ++i) {
      reply.worker_id = i + 1;
      send_message(ep_, addrs[i], reply);
    }
    pending_reg_.clear();
    begin_run();
  }

  void begin_run() {
    running_ = true;
    vis_ = std::make_unique<VisibilityTracker>(reg_.size());
    latest_.assign(reg_.size(), 0);
    assign_initial_intervals();
    broadcast_intervals();
    place_initial_instances();
    const JobId main_id = alloc_.allocate(1);
    JobSpec main = app_->main_job();
    if (main.id != main_id) throw InvariantViolation("main job id mismatch");
    graph_.spawn(main);
    vis_->add_job(main_id, {}, graph_.retired_set());
    plan_job(main_id);
    const SimTime period = opt_.straggler.heartbeat_period;
    ep_.post(period, [this] { liveness_tick(); });
    note("run_start", {{"app", opt_.setup.app},
                       {"workers", opt_.workers},
                       {"iterations", opt_.setup.iterations}});
  }

  void assign_initial_intervals() {
    const int64_t P = int64_t(snake_linear_.size());
    const int64_t N = int64_t(workers_.size());
    intervals_.clear();
    int64_t pos = 0;
    int64_t i = 0;
    for (const auto& [id, _] : workers_) {
      const int64_t span = P / N + (i < P % N ? 1 : 0);
      intervals_[id] = {pos, pos + span};
      pos += span;
      ++i;
    }
    rebuild_part_owner();
  }

  void rebuild_part_owner() {
    for (const auto& [w, iv] : intervals_)
      for (int64_t s = iv.first; s < iv.second; ++s) part_owner_[size_t(snake_linear_[s])] = w;
  }

  void broadcast_intervals() {
    ++epoch_;
    ReassignPartitionsMsg m;
    m.epoch = epoch_;
    for (const auto& [w, iv] : intervals_) m.intervals.emplace_back(w, iv.first, iv.second);
    for (WorkerId w : alive_workers()) send_message(ep_, w, m);
  }

  /// Workers that get the initial version of an object: grids land on every
  /// worker whose partitions can read them (tiles reach into neighbours via
  /// ghost strips), partition scalars on their owner, global scalars
  /// everywhere.
  std::set<WorkerId> initial_targets(ObjectId o) const {
    std::set<WorkerId> out;
    const LogicalObject& obj = reg_.object(o);
    if (!obj.has_region) {
      for (const auto& [id, info] : workers_)
        if (info.alive) out.insert(id);
      return out;
    }
    if (reg_.variables()[obj.variable].kind == VariableKind::PartitionScalar) {
      out.insert(part_owner_.at(size_t(obj.home_partition)));
      return out;
    }
    const DomainSpec& d = reg_.domain();
    for (const auto& index : enumerate_partitions(d)) {
      const int64_t p = partition_linear_index(d, index);
      if (overlap_volume(obj.region, d.partition_box(index)) > 0)
        out.insert(part_owner_.at(size_t(p)));
    }
    return out;
  }

  void place_initial_instances() {
    for (ObjectId o = 0; o < reg_.size(); ++o) {
      CreateDataMsg m;
      m.object = o;
      m.version = 0;
      m.length = uint64_t(reg_.payload_len(o));
      for (WorkerId w : initial_targets(o)) {
        send_message(ep_, w, m);
        holders_[{o, 0}].insert(w);
      }
    }
  }

  // ---- planning -----------------------------------------------------------

  WorkerId lowest_alive() const {
    for (const auto& [id, info] : workers_)
      if (info.alive) return id;
    throw InvariantViolation("no alive workers");
  }

  WorkerId choose_worker(const JobSpec& spec) const {
    auto tally = [&](const std::vector<ObjectId>& objs) {
      std::map<WorkerId, int64_t> score;
      for (ObjectId o : objs) {
        const int64_t hp = reg_.object(o).home_partition;
        if (hp >= 0) score[part_owner_.at(size_t(hp))] += reg_.payload_len(o);
      }
      return score;
    };
    for (const auto* objs : {&spec.writes, &spec.reads}) {
      const auto score = tally(*objs);
      WorkerId best = 0;
      int64_t best_cells = 0;
      for (const auto& [w, cells] : score)  // id-ascending: ties go low
        if (cells > best_cells) {
          best = w;
          best_cells = cells;
        }
      if (best != 0) return best;
    }
    return lowest_alive();
  }

  WorkerId copy_source(ObjectId o, uint64_t v, WorkerId dst) const {
    auto home = instance_home_.find({o, v});
    if (home != instance_home_.end() && workers_.at(home->second).alive &&
        home->second != dst)
      return home->second;
    auto h = holders_.find({o, v});
    if (h != holders_.end())
      for (WorkerId w : h->second)
        if (workers_.at(w).alive && w != dst) return w;
    throw InvariantViolation("no source for object " + std::to_string(o) + "@" +
                             std::to_string(v));
  }

  JobId plan_copy(ObjectId o, uint64_t v, WorkerId dst) {
    const JobId id = alloc_.allocate(1);
    CopyJob c;
    c.object = o;
    c.version = v;
    c.src = copy_source(o, v, dst);
    c.dst = dst;
    copies_[id] = c;
    copy_index_[{o, v, dst}] = id;
    ++copies_planned_;
    CopySendMsg m;
    m.copy_job = id;
    m.object = o;
    m.version = v;
    m.to = dst;
    send_message(ep_, c.src, m);
    return id;
  }

  /// Makes (o, v) available on `w` before a job that reads it may start.
  /// Returns the ordering dependency to wait for (0 if already satisfied)
  /// plus the worker to blame while waiting.
  std::pair<JobId, WorkerId> ensure_readable(ObjectId o, uint64_t v, WorkerId w) {
    auto h = holders_.find({o, v});
    if (h != holders_.end() && h->second.count(w)) return {0, w};
    auto home = instance_home_.find({o, v});
    if (home != instance_home_.end() && home->second == w) {
      const JobId writer = vis_->writer_of(o, v);
      if (writer && graph_.contains(writer) &&
          graph_.record(writer).status != JobStatus::Done)
        return {writer, w};
      return {0, w};  // committed locally; the holder entry is just late
    }
    auto inflight = copy_index_.find({o, v, w});
    if (inflight != copy_index_.end())
      return {inflight->second, copies_.at(inflight->second).src};
    const JobId cid = plan_copy(o, v, w);
    return {cid, copies_.at(cid).src};
  }

  void plan_job(JobId id) {
    const JobSpec& spec = graph_.record(id).spec;
    const WorkerId w = choose_worker(spec);
    graph_.mark_scheduled(id, w);
    ExecuteJobMsg out;
    out.spec = spec;
    std::map<JobId, WorkerId> deps;  // runtime before set, id-ordered
    for (ObjectId o : spec.reads) {
      const uint64_t v = vis_->bind_read(o, id);
      out.read_versions.push_back(v);
      const auto [dep, where] = ensure_readable(o, v, w);
      if (dep) deps.emplace(dep, where);
    }
    for (ObjectId o : spec.writes) {
      const uint64_t nv = ++latest_[o];
      out.write_versions.push_back(nv);
      vis_->record_write(o, nv, id);
      instance_home_[{o, nv}] = w;
      CreateDataMsg m;
      m.object = o;
      m.version = nv;
      m.length = uint64_t(reg_.payload_len(o));
      send_message(ep_, w, m);
    }
    planned_writes_[id] = out.write_versions;
    for (JobId b : spec.before) {
      if (!graph_.contains(b)) continue;  // retired: completed before a checkpoint
      const auto& rb = graph_.record(b);
      if (rb.status == JobStatus::Done || rb.status == JobStatus::Spawned) continue;
      if (rb.assigned == w) deps.emplace(b, w);
      // Cross-worker order arrives through the data the dependency writes;
      // a pure metadata edge lets the parent pipeline ahead safely.
    }
    out.spec.before.clear();
    for (const auto& [dep, where] : deps) {
      out.spec.before.push_back(dep);
      out.dep_locations.push_back(where);
    }
    send_message(ep_, w, out);
  }

  // ---- spawn batches ------------------------------------------------------

  void handle_batch(WorkerId from, const SpawnBatchMsg& msg) {
    if (!graph_.contains(msg.parent)) return;  // pre-rewind leftovers
    const auto& parent = graph_.record(msg.parent);
    if (parent.assigned != from)
      throw ProtocolError("batch from worker " + std::to_string(from) +
                          " for job assigned elsewhere");
    if (!parent.spec.parent) throw ProtocolError("batch from a non-parent job");
    const JobId base = alloc_.allocate(msg.jobs.size());
    std::vector<JobId> ids;
    for (size_t i = 0; i < msg.jobs.size(); ++i) {
      JobSpec spec = msg.jobs[i];
      if (spec.id != i)
        throw ProtocolError("batch child ids must be 0..n-1 in spawn order");
      spec.id = base + i;
      for (JobId& b : spec.before) {
        if (b >= i) throw ProtocolError("before reference must name an earlier sibling");
        b = base + b;
      }
      graph_.spawn(spec);
      std::vector<JobId> preds = spec.before;
      preds.push_back(msg.parent);
      vis_->add_job(spec.id, preds, graph_.retired_set());
      ids.push_back(spec.id);
    }
    for (JobId id : ids) {
      const JobSpec& spec = graph_.record(id).spec;
      if (spec.parent && spec.boundary && should_hold(spec)) {
        held_parents_.push_back(id);
        checkpoint_due_ = true;
      } else {
        plan_job(id);
      }
    }
    maybe_advance();
  }

  /// A boundary parent is held (checkpoint before it runs) when it enters an
  /// iteration that is a positive multiple of the checkpoint interval, or
  /// when a checkpoint is already pending.
  bool should_hold(const JobSpec& spec) const {
    if (checkpoint_due_) return true;
    if (opt_.checkpoint_interval <= 0) return false;
    const int64_t k = app_->iteration_of(spec);
    return k > 0 && k % opt_.checkpoint_interval == 0 && uint64_t(k) > last_ckpt_iteration_;
  }

  // ---- completions --------------------------------------------------------

  void handle_done(WorkerId from, const JobDoneMsg& msg) {
    if (msg.phase == JobPhase::CopySent) return;  // source-side milestone only
    auto c = copies_.find(msg.job);
    if (c != copies_.end()) {
      if (c->second.done) return;
      c->second.done = true;
      holders_[{c->second.object, c->second.version}].insert(c->second.dst);
      copy_index_.erase({c->second.object, c->second.version, c->second.dst});
      if (ckpt_copies_.erase(msg.job) && ckpt_copies_.empty() &&
          ckpt_phase_ == CkptPhase::Replicate)
        begin_saves();
      return;
    }
    if (!graph_.contains(msg.job)) return;  // pre-rewind leftovers
    const auto& rec = graph_.record(msg.job);
    if (rec.assigned != from)
      throw ProtocolError("completion from worker " + std::to_string(from) +
                          " for job assigned elsewhere");
    const JobSpec spec = rec.spec;
    graph_.mark_done(msg.job);
    auto pw = planned_writes_.find(msg.job);
    if (pw != planned_writes_.end()) {
      for (size_t i = 0; i < spec.writes.size(); ++i)
        holders_[{spec.writes[i], pw->second[i]}].insert(from);
      planned_writes_.erase(pw);
    }
    if (spec.parent && spec.boundary) {
      const int64_t k = app_->iteration_of(spec);
      if (k >= 0 && k < opt_.setup.iterations) {  // the final parent spawns nothing
        iteration_ = uint64_t(k) + 1;
        note("iteration", {{"iteration", k}});
      }
    }
    maybe_advance();
  }

  void maybe_advance() {
    if (!running_ || terminated_ || rewinding_) return;
    if (ckpt_phase_ != CkptPhase::Idle) return;
    if (checkpoint_due_ && graph_.at_boundary()) {
      begin_checkpoint();
      return;
    }
    if (!finalizing_ && graph_.pending().empty()) begin_finalize();
  }

  // ---- checkpoints --------------------------------------------------------

  enum class CkptPhase { Idle, Replicate, Save };

  /// Replication factor two: each live instance is persisted by its primary
  /// holder and the next alive worker, so one fail-stop loses nothing.
  std::vector<WorkerId> desired_holders(ObjectId o, uint64_t v) const {
    auto h = holders_.find({o, v});
    std::vector<WorkerId> alive;
    if (h != holders_.end())
      for (WorkerId w : h->second)
        if (workers_.at(w).alive) alive.push_back(w);
    if (alive.empty())
      throw InvariantViolation("instance " + std::to_string(o) + "@" + std::to_string(v) +
                               " lost");
    const WorkerId primary = alive.front();
    std::vector<WorkerId> out{primary};
    const auto all = alive_workers();
    if (all.size() > 1) {
      auto it = std::upper_bound(all.begin(), all.end(), primary);
      out.push_back(it == all.end() ? all.front() : *it);
    }
    return out;
  }

  void begin_checkpoint() {
    ckpt_phase_ = CkptPhase::Replicate;
    ckpt_id_ = ++ckpt_seq_;
    ckpt_holders_.clear();
    ckpt_copies_.clear();
    ckpt_hashes_.clear();
    for (ObjectId o = 0; o < reg_.size(); ++o) {
      const uint64_t v = latest_[o];
      const auto desired = desired_holders(o, v);
      ckpt_holders_[{o, v}] = desired;
      for (WorkerId d : desired)
        if (!holders_[{o, v}].count(d)) ckpt_copies_.insert(plan_copy(o, v, d));
    }
    note("checkpoint_begin", {{"checkpoint", ckpt_id_}, {"iteration", iteration_}});
    if (ckpt_copies_.empty()) begin_saves();
  }

  void begin_saves() {
    ckpt_phase_ = CkptPhase::Save;
    std::map<WorkerId, SaveShardMsg> plan;
    for (const auto& [key, hs] : ckpt_holders_)
      for (WorkerId w : hs) {
        plan[w].checkpoint = ckpt_id_;
        plan[w].entries.push_back(key);
      }
    ckpt_saves_.clear();
    for (auto& [w, m] : plan) {
      ckpt_saves_.insert(w);
      send_message(ep_, w, m);
    }
    if (ckpt_saves_.empty()) commit_checkpoint();
  }

  void handle_save_ack(WorkerId from, const SaveShardAck& ack) {
    if (finalizing_ && ack.checkpoint == final_ckpt_id_) {
      if (!ack.ok) {
        fail(4, "final state harvest failed on worker " + std::to_string(from));
        return;
      }
      for (const auto& [o, v, h] : ack.entries) check_replica_hash(o, v, h);
      for (const auto& [o, v, h] : ack.entries) final_rows_[o] = {v, h};
      final_saves_.erase(from);
      if (final_saves_.empty()) emit_terminate();
      return;
    }
    if (ckpt_phase_ != CkptPhase::Save || ack.checkpoint != ckpt_id_) return;
    if (!ack.ok) {
      note("checkpoint_failed", {{"checkpoint", ckpt_id_}, {"worker", from}});
      ckpt_phase_ = CkptPhase::Idle;
      checkpoint_due_ = false;
      release_held();
      return;
    }
    for (const auto& [o, v, h] : ack.entries) check_replica_hash(o, v, h);
    ckpt_saves_.erase(from);
    if (ckpt_saves_.empty()) commit_checkpoint();
  }

  void check_replica_hash(ObjectId o, uint64_t v, uint64_t hash) {
    auto [it, fresh] = ckpt_hashes_.emplace(std::make_pair(o, v), hash);
    if (!fresh && it->second != hash)
      throw InvariantViolation("replica divergence on object " + std::to_string(o) + "@" +
                               std::to_string(v));
  }

  void commit_checkpoint() {
    CheckpointManifest m;
    m.checkpoint = ckpt_id_;
    m.iteration = iteration_;
    m.next_job_id = alloc_.next();
    m.reassign_epoch = epoch_;
    for (JobId id : held_parents_) {
      JobSpec spec = graph_.record(id).spec;
      spec.before.clear();  // all pre-boundary work is done; order is implicit
      m.parents.push_back(spec);
      m.parent_assignment.emplace_back(kControllerId, id);
    }
    m.object_versions = latest_;
    for (const auto& [key, hs] : ckpt_holders_) m.shard_map.emplace_back(key.first, key.second, hs);
    for (const auto& [w, iv] : intervals_) m.partition_intervals.emplace_back(w, iv.first, iv.second);
    if (manifests_) manifests_->save(m);
    last_committed_ckpt_ = ckpt_id_;
    last_ckpt_iteration_ = iteration_;
    graph_.truncate_done();
    vis_->truncate(graph_.retired_set());
    for (auto it = copies_.begin(); it != copies_.end();)
      it = it->second.done ? copies_.erase(it) : std::next(it);
    note("checkpoint", {{"checkpoint", ckpt_id_}, {"iteration", iteration_}});
    ckpt_phase_ = CkptPhase::Idle;
    checkpoint_due_ = false;
    release_held();
    maybe_advance();
  }

  void release_held() {
    const std::vector<JobId> ids = std::move(held_parents_);
    held_parents_.clear();
    for (JobId id : ids) plan_job(id);
  }

  // ---- final state --------------------------------------------------------

  void begin_finalize() {
    finalizing_ = true;
    final_ckpt_id_ = ++ckpt_seq_;
    std::map<WorkerId, SaveShardMsg> plan;
    for (ObjectId o = 0; o < reg_.size(); ++o) {
      const uint64_t v = latest_[o];
      const WorkerId w = desired_holders(o, v).front();
      plan[w].checkpoint = final_ckpt_id_;
      plan[w].entries.emplace_back(o, v);
    }
    final_saves_.clear();
    ckpt_hashes_.clear();
    for (auto& [w, m] : plan) {
      final_saves_.insert(w);
      send_message(ep_, w, m);
    }
  }

  void emit_terminate() {
    uint64_t digest = fnv1a64(nullptr, 0);
    json rows = json::array();
    for (const auto& [o, vh] : final_rows_) {
      const uint64_t row[3] = {o, vh.first, vh.second};
      digest = fnv1a64(row, sizeof(row), digest);
      rows.push_back({o, vh.first, hex64(vh.second)});
    }
    note("terminate", {{"code", 0},
                       {"app", opt_.setup.app},
                       {"iterations", iteration_},
                       {"final", rows},
                       {"digest", hex64(digest)}});
    broadcast_terminate(0, "done");
    terminated_ = true;
    exit_code_ = 0;
  }

  void broadcast_terminate(uint32_t code, const std::string& reason) {
    for (WorkerId w : alive_workers()) send_message(ep_, w, TerminateMsg{code, reason});
  }

  void fail(uint32_t code, const std::string& reason) {
    note("terminate", {{"code", code}, {"reason", reason}});
    broadcast_terminate(code, reason);
    terminated_ = true;
    exit_code_ = code;
  }

  // ---- liveness and rewind ------------------------------------------------

  void liveness_tick() {
    if (terminated_) return;
    const SimTime deadline =
        opt_.straggler.heartbeat_period * SimTime(opt_.straggler.heartbeat_misses);
    std::vector<WorkerId> dead;
    for (const auto& [id, info] : workers_)
      if (info.alive && ep_.now() - info.last_seen > deadline) dead.push_back(id);
    for (WorkerId w : dead) handle_death(w);
    if (!terminated_)
      ep_.post(opt_.straggler.heartbeat_period, [this] { liveness_tick(); });
  }

  void handle_death(WorkerId w) {
    if (!workers_.at(w).alive) return;
    workers_.at(w).alive = false;
    note("worker_dead", {{"worker", w}});
    if (alive_workers().empty()) {
      fail(4, "no surviving workers");
      return;
    }
    reassign_dead_interval(w);
    broadcast_intervals();
    profile_reports_.clear();
    straggler_streak_.clear();
    rewind();
  }

  /// Splits the dead worker's snake interval between the adjacent interval
  /// neighbours so ownership stays contiguous along the snake.
  void reassign_dead_interval(WorkerId w) {
    const auto iv = intervals_.at(w);
    intervals_.erase(w);
    const int64_t lo = iv.first;
    const int64_t hi = iv.second;
    if (lo >= hi) return;
    WorkerId left = 0;
    WorkerId right = 0;
    for (const auto& [id, other] : intervals_) {
      if (other.second == lo && workers_.at(id).alive) left = id;
      if (other.first == hi && workers_.at(id).alive) right = id;
    }
    if (left && right) {
      const int64_t mid = lo + (hi - lo + 1) / 2;
      intervals_.at(left).second = mid;
      intervals_.at(right).first = mid;
    } else if (left) {
      intervals_.at(left).second = hi;
    } else if (right) {
      intervals_.at(right).first = lo;
    } else {
      // Sole interval owner died: hand everything to the lowest survivor.
      intervals_[lowest_alive()] = {lo, hi};
    }
    rebuild_part_owner();
  }

  void rewind() {
    ++rewinds_;
    held_parents_.clear();
    checkpoint_due_ = false;
    ckpt_phase_ = CkptPhase::Idle;
    ckpt_copies_.clear();
    ckpt_saves_.clear();
    ckpt_holders_.clear();
    finalizing_ = false;
    final_saves_.clear();
    final_rows_.clear();
    copies_.clear();
    copy_index_.clear();
    planned_writes_.clear();
    holders_.clear();
    instance_home_.clear();
    graph_.reset_for_rewind(alloc_.next());
    CheckpointManifest m;
    const bool have_manifest =
        manifests_ && last_committed_ckpt_ > 0 && manifests_->load(last_committed_ckpt_, m);
    rewinding_ = true;
    restore_acks_.clear();
    if (!have_manifest) {
      rewind_ckpt_ = 0;
      iteration_ = 0;
      last_ckpt_iteration_ = 0;
      latest_.assign(reg_.size(), 0);
      vis_->reset(latest_);
      pending_parents_.clear();
      pending_parents_.push_back(app_->main_job());
      RestoreShardMsg r;
      r.checkpoint = 0;
      r.reset_first = true;
      for (WorkerId w : alive_workers()) {
        restore_acks_.insert(w);
        send_message(ep_, w, r);
      }
      note("rewind", {{"checkpoint", 0}});
      return;
    }
    rewind_ckpt_ = m.checkpoint;
    iteration_ = m.iteration;
    last_ckpt_iteration_ = m.iteration;
    latest_ = m.object_versions;
    vis_->reset(latest_);
    pending_parents_ = m.parents;
    std::map<WorkerId, RestoreShardMsg> plan;
    for (WorkerId w : alive_workers()) {
      plan[w].checkpoint = m.checkpoint;
      plan[w].reset_first = true;
    }
    for (const auto& [o, v, hs] : m.shard_map) {
      bool anywhere = false;
      for (WorkerId w : hs)
        if (workers_.at(w).alive) {
          plan.at(w).entries.emplace_back(o, v);
          anywhere = true;
        }
      if (!anywhere) {
        fail(4, "checkpoint shard for object " + std::to_string(o) + " lost");
        return;
      }
    }
    restore_acks_.clear();
    for (auto& [w, r] : plan) {
      restore_acks_.insert(w);
      send_message(ep_, w, r);
    }
    note("rewind", {{"checkpoint", m.checkpoint}, {"iteration", m.iteration}});
  }

  void handle_restore_ack(WorkerId from, const RestoreShardAck& ack) {
    if (!rewinding_ || ack.checkpoint != rewind_ckpt_) return;
    if (!ack.ok) {
      fail(4, "restore failed on worker " + std::to_string(from));
      return;
    }
    for (const auto& [o, v] : ack.loaded) {
      holders_[{o, v}].insert(from);
      auto [it, fresh] = instance_home_.emplace(std::make_pair(o, v), from);
      if (!fresh && from < it->second) it->second = from;
    }
    restore_acks_.erase(from);
    if (restore_acks_.empty()) complete_rewind();
  }

  void complete_rewind() {
    rewinding_ = false;
    if (rewind_ckpt_ == 0) place_initial_instances();
    for (JobSpec spec : pending_parents_) {
      spec.id = alloc_.allocate(1);  // fresh ids: stale traffic can never match
      spec.before.clear();
      graph_.spawn(spec);
      vis_->add_job(spec.id, {}, graph_.retired_set());
      plan_job(spec.id);
    }
    pending_parents_.clear();
    note("resume", {{"checkpoint", rewind_ckpt_}, {"iteration", iteration_}});
  }

  // ---- straggler detection ------------------------------------------------

  void handle_profile(WorkerId from, const ProfileReportMsg& msg) {
    note("profile", {{"worker", from},
                     {"window", msg.window_index},
                     {"compute", msg.compute},
                     {"idle", msg.idle},
                     {"jobs", msg.jobs_done},
                     {"queue", msg.queue_len}});
    profile_reports_[msg.window_index][from] = msg;
    evaluate_window(msg.window_index);
  }

  void evaluate_window(uint64_t window) {
    auto it = profile_reports_.find(window);
    if (it == profile_reports_.end()) return;
    const auto alive = alive_workers();
    for (WorkerId w : alive)
      if (!it->second.count(w)) return;  // window still incomplete
    const auto reports = it->second;
    profile_reports_.erase(profile_reports_.begin(), std::next(it));
    for (WorkerId w : alive) {
      const auto& mine = reports.at(w);
      if (mine.window_len <= 0) continue;
      const bool busy =
          double(mine.compute) / double(mine.window_len) >= opt_.straggler.busy_ratio;
      bool peer_blocked = false;
      for (WorkerId p : alive) {
        if (p == w) continue;
        const auto& theirs = reports.at(p);
        if (theirs.window_len <= 0) continue;
        for (const auto& [target, t] : theirs.blocked_on)
          if (target == w &&
              double(t) / double(theirs.window_len) > opt_.straggler.blocked_ratio)
            peer_blocked = true;
      }
      if (busy && peer_blocked) {
        const uint64_t streak = ++straggler_streak_[w];
        note("straggler_window", {{"worker", w}, {"window", window}, {"streak", streak}});
        if (streak >= uint64_t(opt_.straggler.windows)) {
          straggler_streak_[w] = 0;
          note("straggler", {{"worker", w}, {"window", window}});
          if (opt_.straggler.rebalance) rebalance(w, reports);
        }
      } else {
        straggler_streak_[w] = 0;
      }
    }
  }

  /// Greedy load shedding: peel partitions off the straggler's interval ends
  /// toward the adjacent interval owners while the estimated bottleneck
  /// (per-partition compute rate times partition count) strictly improves.
  void rebalance(WorkerId s, const std::map<WorkerId, ProfileReportMsg>& reports) {
    if (snake_linear_.size() <= 1) {
      note("rebalance_skipped", {{"worker", s}, {"reason", "single partition"}});
      return;
    }
    std::map<WorkerId, double> tau;
    std::map<WorkerId, int64_t> parts;
    for (const auto& [w, iv] : intervals_) {
      parts[w] = iv.second - iv.first;
      const auto r = reports.find(w);
      const double compute = r == reports.end() ? 0.0 : double(r->second.compute);
      tau[w] = compute / double(std::max<int64_t>(1, parts[w]));
    }
    auto est_max = [&] {
      double m = 0;
      for (const auto& [w, n] : parts) m = std::max(m, tau[w] * double(n));
      return m;
    };
    auto iv = intervals_.at(s);
    std::vector<std::pair<int64_t, WorkerId>> moves;  // (snake pos, new owner)
    while (iv.first < iv.second) {
      WorkerId left = 0;
      WorkerId right = 0;
      for (const auto& [id, other] : intervals_) {
        if (id == s) continue;
        if (other.second == iv.first) left = id;
        if (other.first == iv.second) right = id;
      }
      const double current = est_max();
      double best = current;
      int choice = 0;
      for (const auto& [nb, side] : {std::pair<WorkerId, int>{left, 1},
                                     std::pair<WorkerId, int>{right, 2}}) {
        if (!nb) continue;
        --parts[s];
        ++parts[nb];
        const double cand = est_max();
        ++parts[s];
        --parts[nb];
        if (cand < best) {
          best = cand;
          choice = side;
        }
      }
      if (choice == 0) break;
      if (choice == 1) {
        moves.emplace_back(iv.first, left);
        intervals_.at(left).second = ++iv.first;
        --parts[s];
        ++parts[left];
      } else {
        moves.emplace_back(iv.second - 1, right);
        intervals_.at(right).first = --iv.second;
        --parts[s];
        ++parts[right];
      }
    }
    if (moves.empty()) {
      note("rebalance_skipped", {{"worker", s}, {"reason", "no improving move"}});
      return;
    }
    intervals_.at(s) = iv;
    rebuild_part_owner();
    broadcast_intervals();
    ++rebalances_;
    note("rebalance", {{"worker", s}, {"moved", moves.size()}, {"epoch", epoch_}});
    // Warm the new owners so their next reads do not stall on fresh copies.
    for (const auto& [pos, dst] : moves) {
      const int64_t p = snake_linear_[size_t(pos)];
      for (ObjectId o = 0; o < reg_.size(); ++o) {
        if (reg_.object(o).home_partition != p) continue;
        const uint64_t v = latest_[o];
        if (holders_[{o, v}].count(dst) || copy_index_.count({o, v, dst})) continue;
        plan_copy(o, v, dst);
      }
    }
  }

  Endpoint& ep_;
  ControllerOptions opt_;
  std::shared_ptr<App> app_;
  const ObjectRegistry& reg_;
  std::vector<int64_t> snake_linear_;  // snake position -> linear partition

  std::map<WorkerId, WorkerInfo> workers_;
  std::vector<WorkerId> reg_order_;
  std::map<WorkerId, RegisterRequest> pending_reg_;
  bool running_ = false;

  JobIdAllocator alloc_;
  JobGraph graph_;
  std::unique_ptr<VisibilityTracker> vis_;
  std::vector<uint64_t> latest_;  // latest assigned version per object
  std::map<std::pair<ObjectId, uint64_t>, std::set<WorkerId>> holders_;
  std::map<std::pair<ObjectId, uint64_t>, WorkerId> instance_home_;
  std::map<JobId, std::vector<uint64_t>> planned_writes_;
  std::map<JobId, CopyJob> copies_;
  std::map<std::tuple<ObjectId, uint64_t, WorkerId>, JobId> copy_index_;
  size_t copies_planned_ = 0;

  std::map<WorkerId, std::pair<int64_t, int64_t>> intervals_;  // snake [lo, hi)
  std::vector<WorkerId> part_owner_;
  uint64_t epoch_ = 0;

  uint64_t iteration_ = 0;  // completed outer iterations
  CkptPhase ckpt_phase_ = CkptPhase::Idle;
  bool checkpoint_due_ = false;
  uint64_t ckpt_seq_ = 0;
  uint64_t ckpt_id_ = 0;
  uint64_t last_committed_ckpt_ = 0;
  uint64_t last_ckpt_iteration_ = 0;
  std::set<JobId> ckpt_copies_;
  std::set<WorkerId> ckpt_saves_;
  std::map<std::pair<ObjectId, uint64_t>, std::vector<WorkerId>> ckpt_holders_;
  std::map<std::pair<ObjectId, uint64_t>, uint64_t> ckpt_hashes_;
  std::vector<JobId> held_parents_;
  std::unique_ptr<ManifestStore> manifests_;

  bool finalizing_ = false;
  uint64_t final_ckpt_id_ = 0;
  std::set<WorkerId> final_saves_;
  std::map<ObjectId, std::pair<uint64_t, uint64_t>> final_rows_;

  bool rewinding_ = false;
  uint64_t rewind_ckpt_ = 0;
  std::set<WorkerId> restore_acks_;
  std::vector<JobSpec> pending_parents_;
  size_t rewinds_ = 0;

  std::map<uint64_t, std::map<WorkerId, ProfileReportMsg>> profile_reports_;
  std::map<WorkerId, uint64_t> straggler_streak_;
  size_t rebalances_ = 0;

  bool terminated_ = false;
  uint32_t exit_code_ = 0;
};

}  // namespace gridrun
