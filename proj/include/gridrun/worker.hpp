#pragma once

#include <exception>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "gridrun/app.hpp"
#include "gridrun/apps.hpp"
#include "gridrun/common.hpp"
#include "gridrun/data_model.hpp"
#include "gridrun/job_graph.hpp"
#include "gridrun/message.hpp"
#include "gridrun/shard_store.hpp"
#include "gridrun/translator.hpp"
#include "gridrun/transport.hpp"

namespace gridrun {

struct WorkerOptions {
  std::string listen_address;  // advertised to peers; empty under simulation
  std::string store_dir;       // durable shard directory
  uint32_t threads = 1;        // concurrent kernel budget
};

/// Worker node: runs kernels, keeps the local instance store, ships copies,
/// persists checkpoint shards, and reports heartbeats and profile windows.
/// All ordering is local: a job runs once every before-reference has
/// completed on this worker (compute done here, or copy payload arrived).
class WorkerCore : public Node {
 public:
  WorkerCore(Endpoint& ep, WorkerOptions opt) : ep_(ep), opt_(std::move(opt)) {
    if (opt_.threads < 1) throw ConfigError("worker threads must be >= 1");
  }

  /// Announce to the controller; everything else is reactive.
  void start() {
    RegisterRequest req;
    req.listen_address = opt_.listen_address;
    req.threads = opt_.threads;
    send_message(ep_, kControllerId, req);
  }

  WorkerId id() const { return id_; }
  bool terminated() const { return terminated_; }
  uint32_t exit_code() const { return exit_code_; }
  const InstanceStore& store() const { return store_; }
  size_t pending_jobs() const { return pending_.size(); }

  void on_message(WorkerId from, MessageTag tag, const std::vector<uint8_t>& body) override {
    switch (tag) {
      case MessageTag::RegisterWorker:
        require_controller(from, tag);
        handle_register(decode_message<RegisterReply>(body));
        return;
      case MessageTag::ExecuteJob:
        require_controller(from, tag);
        handle_execute(decode_message<ExecuteJobMsg>(body));
        return;
      case MessageTag::CreateData:
        require_controller(from, tag);
        handle_create(decode_message<CreateDataMsg>(body));
        return;
      case MessageTag::CopySend:
        require_controller(from, tag);
        handle_copy_send(decode_message<CopySendMsg>(body));
        return;
      case MessageTag::CopyReceive:
        handle_copy_receive(decode_message<CopyReceiveMsg>(body));
        return;
      case MessageTag::JobDone:  // relay of a dependency completed elsewhere
        require_controller(from, tag);
        handle_done_relay(decode_message<JobDoneMsg>(body));
        return;
      case MessageTag::SaveShard:
        require_controller(from, tag);
        handle_save(decode_message<SaveShardMsg>(body));
        return;
      case MessageTag::RestoreShard:
        require_controller(from, tag);
        handle_restore(decode_message<RestoreShardMsg>(body));
        return;
      case MessageTag::ReassignPartitions:
        require_controller(from, tag);
        epoch_ = decode_message<ReassignPartitionsMsg>(body).epoch;
        return;
      case MessageTag::Terminate:
        require_controller(from, tag);
        handle_terminate(decode_message<TerminateMsg>(body));
        return;
      default:
        throw ProtocolError("worker: unexpected tag " + std::to_string(uint16_t(tag)));
    }
  }

 private:
  struct PendingJob {
    ExecuteJobMsg msg;
    uint32_t unmet = 0;
    bool running = false;
  };

  struct RunResult {
    std::vector<JobSpec> spawned;
    std::exception_ptr error;
  };

  void require_controller(WorkerId from, MessageTag tag) const {
    if (from != kControllerId)
      throw ProtocolError("worker: tag " + std::to_string(uint16_t(tag)) +
                          " from non-controller " + std::to_string(from));
  }

  void handle_register(const RegisterReply& reply) {
    id_ = reply.worker_id;
    setup_ = RunSetup::from_bytes(reply.setup);
    app_ = make_app(setup_);
    heartbeat_period_ = reply.heartbeat_period;
    profile_window_ = reply.profile_window;
    if (!opt_.store_dir.empty()) shards_ = std::make_unique<ShardStore>(opt_.store_dir);
    seg_start_ = window_start_ = ep_.now();
    send_message(ep_, kControllerId, HeartbeatMsg{});
    ep_.post(heartbeat_period_, [this] { heartbeat_tick(); });
    ep_.post(profile_window_, [this] { profile_tick(); });
  }

  void heartbeat_tick() {
    if (terminated_) return;
    send_message(ep_, kControllerId, HeartbeatMsg{});
    ep_.post(heartbeat_period_, [this] { heartbeat_tick(); });
  }

  void profile_tick() {
    if (terminated_) return;
    close_interval();
    ProfileReportMsg m;
    m.window_index = window_index_++;
    m.window_start = window_start_;
    m.window_len = ep_.now() - window_start_;
    m.compute = compute_;
    m.idle = idle_;
    for (const auto& [w, t] : blocked_acc_) m.blocked_on.emplace_back(w, t);
    m.jobs_done = jobs_done_window_;
    m.queue_len = pending_.size();
    send_message(ep_, kControllerId, m);
    window_start_ = ep_.now();
    compute_ = idle_ = 0;
    blocked_acc_.clear();
    jobs_done_window_ = 0;
    ep_.post(profile_window_, [this] { profile_tick(); });
  }

  /// Closes the open accounting interval. While any kernel is in flight the
  /// time is compute; otherwise it is blocked, charged in equal shares to the
  /// remote workers whose unfinished outputs the queue waits on (remainder to
  /// the lowest id), or idle when nothing is queued against a remote.
  void close_interval() {
    const SimTime now = ep_.now();
    const SimTime len = now - seg_start_;
    seg_start_ = now;
    if (len <= 0) return;
    if (in_flight_ > 0) {
      compute_ += len;
      return;
    }
    std::set<WorkerId> blame;
    for (const auto& [_, pj] : pending_) {
      if (pj.unmet == 0) continue;
      for (size_t i = 0; i < pj.msg.spec.before.size(); ++i) {
        if (done_.contains(pj.msg.spec.before[i])) continue;
        const WorkerId loc = pj.msg.dep_locations[i];
        if (loc != id_ && loc != kControllerId) blame.insert(loc);
      }
    }
    if (blame.empty()) {
      idle_ += len;
      return;
    }
    const SimTime share = len / SimTime(blame.size());
    SimTime rem = len - share * SimTime(blame.size());
    for (WorkerId w : blame) {  // ascending: remainder lands on the lowest id
      blocked_acc_[w] += share + rem;
      rem = 0;
    }
  }

  void handle_execute(ExecuteJobMsg msg) {
    const JobId id = msg.spec.id;
    if (done_.contains(id) || pending_.count(id))
      throw ProtocolError("duplicate job id " + std::to_string(id));
    for (const auto& [_, pj] : pending_)
      for (size_t i = 0; i < pj.msg.spec.writes.size(); ++i)
        for (size_t k = 0; k < msg.spec.writes.size(); ++k)
          if (pj.msg.spec.writes[i] == msg.spec.writes[k] &&
              pj.msg.write_versions[i] == msg.write_versions[k])
            throw InvariantViolation("two jobs write " + std::to_string(msg.spec.writes[k]) +
                                     "@" + std::to_string(msg.write_versions[k]));
    close_interval();
    PendingJob pj;
    pj.msg = std::move(msg);
    for (JobId dep : pj.msg.spec.before)
      if (!done_.contains(dep)) {
        ++pj.unmet;
        waiters_[dep].push_back(id);
      }
    pending_.emplace(id, std::move(pj));
    try_dispatch();
  }

  void try_dispatch() {
    while (in_flight_ < opt_.threads) {
      PendingJob* next = nullptr;
      JobId next_id = 0;
      for (auto& [id, pj] : pending_)
        if (!pj.running && pj.unmet == 0) {
          next = &pj;
          next_id = id;
          break;  // map is id-ordered: lowest runnable first
        }
      if (!next) return;
      close_interval();
      next->running = true;
      ++in_flight_;
      auto res = std::make_shared<RunResult>();
      const ExecuteJobMsg msg = next->msg;  // stable copy for the kernel thread
      ep_.run_async(
          app_->modeled_cost(msg.spec),
          [this, msg, res] {
            try {
              JobContext ctx(app_->registry(), store_, msg.spec, msg.read_versions,
                             msg.write_versions, /*expect_placeholder=*/true);
              app_->run_kernel(ctx);
              res->spawned = std::move(ctx.spawned());
            } catch (...) {
              res->error = std::current_exception();
            }
          },
          [this, id = next_id, epoch = run_epoch_, res] {
            if (epoch != run_epoch_) return;  // rewound mid-flight: discard
            if (res->error) std::rethrow_exception(res->error);
            complete_job(id, std::move(res->spawned));
          });
    }
  }

  void complete_job(JobId id, std::vector<JobSpec> spawned) {
    close_interval();
    auto it = pending_.find(id);
    if (it == pending_.end()) throw InvariantViolation("completion for unknown job");
    const ExecuteJobMsg msg = std::move(it->second.msg);
    pending_.erase(it);
    --in_flight_;
    ++jobs_done_window_;
    if (msg.spec.parent) {  // batch first, then done: the controller sees them in order
      SpawnBatchMsg batch;
      batch.parent = id;
      batch.jobs = std::move(spawned);
      send_message(ep_, kControllerId, batch);
    }
    send_message(ep_, kControllerId, JobDoneMsg{id, JobPhase::Done});
    done_.add(id);
    satisfy_waiters(id);
    for (size_t i = 0; i < msg.spec.writes.size(); ++i)
      flush_sends(msg.spec.writes[i], msg.write_versions[i]);
    try_dispatch();
  }

  void satisfy_waiters(JobId dep) {
    auto it = waiters_.find(dep);
    if (it == waiters_.end()) return;
    const std::vector<JobId> ids = std::move(it->second);
    waiters_.erase(it);
    for (JobId id : ids) {
      auto p = pending_.find(id);
      if (p != pending_.end() && p->second.unmet > 0) --p->second.unmet;
    }
  }

  void handle_create(const CreateDataMsg& msg) {
    if (int64_t(msg.length) != app_->registry().payload_len(msg.object))
      throw ProtocolError("create length mismatch for object " + std::to_string(msg.object));
    if (msg.version == 0) {
      std::vector<double> payload = app_->initial_payload(msg.object);
      if (payload.size() != msg.length) throw InvariantViolation("bad initial payload length");
      store_.put(msg.object, 0, std::move(payload));
      flush_sends(msg.object, 0);
      return;
    }
    // Placeholder for a pending write; never clobber real (byte-identical
    // content-wise) data that a stale duplicate already delivered.
    auto existing = store_.get(msg.object, msg.version);
    if (!existing) store_.put(msg.object, msg.version, std::vector<double>{});
  }

  void handle_copy_send(CopySendMsg msg) {
    if (msg.to == id_) throw ProtocolError("self copy for object " + std::to_string(msg.object));
    auto payload = store_.get(msg.object, msg.version);
    if (payload && !payload->empty())
      ship_copy(msg, payload);
    else
      waiting_sends_[{msg.object, msg.version}].push_back(msg);
  }

  void ship_copy(const CopySendMsg& msg, const InstanceStore::Payload& payload) {
    CopyReceiveMsg out;
    out.copy_job = msg.copy_job;
    out.object = msg.object;
    out.version = msg.version;
    out.payload = *payload;
    send_message(ep_, msg.to, out);
    send_message(ep_, kControllerId, JobDoneMsg{msg.copy_job, JobPhase::CopySent});
  }

  void flush_sends(ObjectId object, uint64_t version) {
    auto it = waiting_sends_.find({object, version});
    if (it == waiting_sends_.end()) return;
    auto payload = store_.get(object, version);
    if (!payload || payload->empty())
      throw InvariantViolation("flushing sends without a payload");
    const std::vector<CopySendMsg> sends = std::move(it->second);
    waiting_sends_.erase(it);
    for (const auto& s : sends) ship_copy(s, payload);
  }

  void handle_copy_receive(const CopyReceiveMsg& msg) {
    close_interval();
    store_.put(msg.object, msg.version, msg.payload);
    copied_in_.insert({msg.object, msg.version});
    prune_copies(msg.object, msg.version);
    if (!done_.contains(msg.copy_job)) {
      done_.add(msg.copy_job);
      send_message(ep_, kControllerId, JobDoneMsg{msg.copy_job, JobPhase::Done});
      satisfy_waiters(msg.copy_job);
    }
    flush_sends(msg.object, msg.version);
    try_dispatch();
  }

  void handle_done_relay(const JobDoneMsg& msg) {
    if (done_.contains(msg.job)) return;
    close_interval();
    done_.add(msg.job);
    satisfy_waiters(msg.job);
    try_dispatch();
  }

  /// True when some not-yet-finished local job reads (object, version) or a
  /// queued outbound copy still needs it.
  bool version_referenced(ObjectId object, uint64_t version) const {
    for (const auto& [_, pj] : pending_)
      for (size_t i = 0; i < pj.msg.spec.reads.size(); ++i)
        if (pj.msg.spec.reads[i] == object && pj.msg.read_versions[i] == version) return true;
    return waiting_sends_.count({object, version}) > 0;
  }

  /// Ghost-exchange garbage collection: once a newer copy of an object lands
  /// here, earlier copied-in versions nobody references any more are dropped.
  /// Locally written or restored instances are kept until a checkpoint prunes
  /// them.
  void prune_copies(ObjectId object, uint64_t newer_than) {
    std::vector<uint64_t> drop;
    for (auto it = copied_in_.lower_bound({object, 0});
         it != copied_in_.end() && it->first == object; ++it)
      if (it->second < newer_than && !version_referenced(object, it->second))
        drop.push_back(it->second);
    for (uint64_t v : drop) {
      store_.erase(object, v);
      copied_in_.erase({object, v});
    }
  }

  void handle_save(const SaveShardMsg& msg) {
    SaveShardAck ack;
    ack.checkpoint = msg.checkpoint;
    std::vector<ShardStore::Entry> entries;
    bool ok = shards_ != nullptr;
    for (const auto& [obj, ver] : msg.entries) {
      auto payload = store_.get(obj, ver);
      if (!payload || payload->empty()) {
        ok = false;
        break;
      }
      entries.push_back({obj, ver, *payload});
      ack.entries.emplace_back(obj, ver, payload_hash(*payload));
    }
    if (ok) {
      try {
        ack.bytes = shards_->save(msg.checkpoint, id_, entries);
      } catch (const std::exception&) {
        ok = false;
      }
    }
    ack.ok = ok;
    if (!ok) ack.entries.clear();
    send_message(ep_, kControllerId, ack);
    if (!ok) return;
    for (const auto& [obj, ver] : msg.entries) {  // saved: older versions are dead weight
      auto all = store_.snapshot();
      for (const auto& [key, payload] : all)
        if (key.first == obj && key.second < ver && !version_referenced(obj, key.second)) {
          store_.erase(obj, key.second);
          copied_in_.erase(key);
        }
    }
  }

  void handle_restore(const RestoreShardMsg& msg) {
    if (msg.reset_first) reset_volatile();
    RestoreShardAck ack;
    ack.checkpoint = msg.checkpoint;
    ack.ok = true;
    if (!msg.entries.empty()) {
      if (!shards_) {
        ack.ok = false;
      } else {
        auto res = shards_->load(msg.checkpoint, id_);
        if (!res.complete) {
          ack.ok = false;
        } else {
          std::map<std::pair<ObjectId, uint64_t>, const ShardStore::Entry*> index;
          for (const auto& e : res.entries) index[{e.object, e.version}] = &e;
          for (const auto& [obj, ver] : msg.entries) {
            auto it = index.find({obj, ver});
            if (it == index.end()) {
              ack.ok = false;
              continue;
            }
            store_.put(obj, ver, it->second->payload);
            ack.loaded.emplace_back(obj, ver);
          }
        }
      }
    }
    send_message(ep_, kControllerId, ack);
  }

  void reset_volatile() {
    ++run_epoch_;
    close_interval();
    pending_.clear();
    waiters_.clear();
    waiting_sends_.clear();
    done_.clear();
    copied_in_.clear();
    in_flight_ = 0;
    store_.clear();
  }

  void handle_terminate(const TerminateMsg& msg) {
    close_interval();
    terminated_ = true;
    exit_code_ = msg.code;
  }

  Endpoint& ep_;
  WorkerOptions opt_;
  WorkerId id_ = 0;
  RunSetup setup_;
  std::shared_ptr<App> app_;
  std::unique_ptr<ShardStore> shards_;
  InstanceStore store_;

  std::map<JobId, PendingJob> pending_;
  std::map<JobId, std::vector<JobId>> waiters_;
  RetiredIdSet done_;
  std::map<std::pair<ObjectId, uint64_t>, std::vector<CopySendMsg>> waiting_sends_;
  std::set<std::pair<ObjectId, uint64_t>> copied_in_;
  uint32_t in_flight_ = 0;
  uint64_t epoch_ = 0;      // partition map epoch, informational
  uint64_t run_epoch_ = 0;  // bumped on reset; orphans stale completions

  SimTime heartbeat_period_ = kSecond;
  SimTime profile_window_ = 2 * kSecond;
  SimTime seg_start_ = 0;
  SimTime window_start_ = 0;
  SimTime compute_ = 0;
  SimTime idle_ = 0;
  std::map<WorkerId, SimTime> blocked_acc_;
  uint64_t window_index_ = 0;
  uint64_t jobs_done_window_ = 0;

  bool terminated_ = false;
  uint32_t exit_code_ = 0;
};

}  // namespace gridrun
