#pragma once

#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "gridrun/common.hpp"
#include "gridrun/job_graph.hpp"
#include "gridrun/wire.hpp"

namespace gridrun {

/// Every frame on the wire carries one of these tags. Four tags are used in
/// both directions: RegisterWorker (request up, reply down), JobDone
/// (completion up, dependency relay down), SaveShard and RestoreShard
/// (command down, ack up). The receiver's role disambiguates the body.
enum class MessageTag : uint16_t {
  RegisterWorker = 1,
  SpawnBatch = 2,
  ExecuteJob = 3,
  CreateData = 4,
  CopySend = 5,
  CopyReceive = 6,
  JobDone = 7,
  ProfileReport = 8,
  Heartbeat = 9,
  SaveShard = 10,
  RestoreShard = 11,
  ReassignPartitions = 12,
  Terminate = 13,
};

inline const char* to_string(MessageTag t) {
  switch (t) {
    case MessageTag::RegisterWorker: return "RegisterWorker";
    case MessageTag::SpawnBatch: return "SpawnBatch";
    case MessageTag::ExecuteJob: return "ExecuteJob";
    case MessageTag::CreateData: return "CreateData";
    case MessageTag::CopySend: return "CopySend";
    case MessageTag::CopyReceive: return "CopyReceive";
    case MessageTag::JobDone: return "JobDone";
    case MessageTag::ProfileReport: return "ProfileReport";
    case MessageTag::Heartbeat: return "Heartbeat";
    case MessageTag::SaveShard: return "SaveShard";
    case MessageTag::RestoreShard: return "RestoreShard";
    case MessageTag::ReassignPartitions: return "ReassignPartitions";
    case MessageTag::Terminate: return "Terminate";
  }
  return "Unknown";
}

inline void encode_job_spec(WireWriter& w, const JobSpec& s) {
  w.varint(s.id);
  w.varint(s.function);
  w.blob(s.params);
  w.id_set(s.reads);
  w.id_set(s.writes);
  w.id_set(s.before);
  w.u8(uint8_t(s.parent) | uint8_t(s.boundary) << 1);
}

inline JobSpec decode_job_spec(WireReader& r) {
  JobSpec s;
  s.id = r.varint();
  s.function = uint32_t(r.varint());
  s.params = r.blob();
  s.reads = r.id_set();
  s.writes = r.id_set();
  s.before = r.id_set();
  const uint8_t flags = r.u8();
  s.parent = flags & 1;
  s.boundary = flags & 2;
  return s;
}

/// Worker -> controller on connect, and worker -> worker as a hello naming
/// the already-assigned id (claimed_id != 0) so the peer can map the socket.
struct RegisterRequest {
  static constexpr MessageTag tag = MessageTag::RegisterWorker;
  std::string listen_address;  // empty under the simulated transport
  uint32_t threads = 1;
  WorkerId claimed_id = 0;  // 0: fresh registration; else peer hello

  void encode(WireWriter& w) const {
    w.str(listen_address);
    w.varint(threads);
    w.varint(claimed_id);
  }

  static RegisterRequest decode(WireReader& r) {
    RegisterRequest m;
    m.listen_address = r.str();
    m.threads = uint32_t(r.varint());
    m.claimed_id = WorkerId(r.varint());
    return m;
  }
};

/// Controller -> worker once the full crew has registered. Carries the full
/// run setup (domain, variables, app) so worker binaries need no config file.
struct RegisterReply {
  static constexpr MessageTag tag = MessageTag::RegisterWorker;
  WorkerId worker_id = 0;
  std::vector<std::pair<WorkerId, std::string>> peers;
  std::vector<uint8_t> setup;  // encoded RunSetup
  SimTime heartbeat_period = kSecond;
  SimTime profile_window = 2 * kSecond;

  void encode(WireWriter& w) const {
    w.varint(worker_id);
    w.varint(peers.size());
    for (const auto& [id, addr] : peers) {
      w.varint(id);
      w.str(addr);
    }
    w.blob(setup);
    w.varint(uint64_t(heartbeat_period));
    w.varint(uint64_t(profile_window));
  }

  static RegisterReply decode(WireReader& r) {
    RegisterReply m;
    m.worker_id = WorkerId(r.varint());
    const uint64_t n = r.varint();
    for (uint64_t i = 0; i < n; ++i) {
      const WorkerId id = WorkerId(r.varint());
      m.peers.emplace_back(id, r.str());
    }
    m.setup = r.blob();
    m.heartbeat_period = SimTime(r.varint());
    m.profile_window = SimTime(r.varint());
    return m;
  }
};

/// Worker -> controller: a parent job's children. Job ids and before sets
/// are batch-relative indices; the controller allocates the id block.
struct SpawnBatchMsg {
  static constexpr MessageTag tag = MessageTag::SpawnBatch;
  JobId parent = 0;
  std::vector<JobSpec> jobs;

  void encode(WireWriter& w) const {
    w.varint(parent);
    w.varint(jobs.size());
    for (const auto& j : jobs) encode_job_spec(w, j);
  }

  static SpawnBatchMsg decode(WireReader& r) {
    SpawnBatchMsg m;
    m.parent = r.varint();
    const uint64_t n = r.varint();
    for (uint64_t i = 0; i < n; ++i) m.jobs.push_back(decode_job_spec(r));
    return m;
  }
};

/// Controller -> worker: run one job. Version lists parallel the spec's read
/// and write sets; dep_locations parallels the before set and names the
/// worker where each dependency completes (the receiver itself for local
/// ones, which need no relay).
struct ExecuteJobMsg {
  static constexpr MessageTag tag = MessageTag::ExecuteJob;
  JobSpec spec;
  std::vector<uint64_t> read_versions;
  std::vector<uint64_t> write_versions;
  std::vector<WorkerId> dep_locations;

  void encode(WireWriter& w) const {
    encode_job_spec(w, spec);
    for (uint64_t v : read_versions) w.varint(v);
    for (uint64_t v : write_versions) w.varint(v);
    for (WorkerId d : dep_locations) w.varint(d);
  }

  static ExecuteJobMsg decode(WireReader& r) {
    ExecuteJobMsg m;
    m.spec = decode_job_spec(r);
    m.read_versions.resize(m.spec.reads.size());
    for (auto& v : m.read_versions) v = r.varint();
    m.write_versions.resize(m.spec.writes.size());
    for (auto& v : m.write_versions) v = r.varint();
    m.dep_locations.resize(m.spec.before.size());
    for (auto& d : m.dep_locations) d = WorkerId(r.varint());
    return m;
  }
};

/// Controller -> worker: materialize a physical instance. Version 0 carries
/// the app's initial condition (computed locally from the setup); later
/// versions are placeholders created ahead of the job that writes them.
struct CreateDataMsg {
  static constexpr MessageTag tag = MessageTag::CreateData;
  ObjectId object = 0;
  uint64_t version = 0;
  uint64_t length = 0;  // payload length in doubles

  void encode(WireWriter& w) const {
    w.varint(object);
    w.varint(version);
    w.varint(length);
  }

  static CreateDataMsg decode(WireReader& r) {
    CreateDataMsg m;
    m.object = r.varint();
    m.version = r.varint();
    m.length = r.varint();
    return m;
  }
};

/// Controller -> source worker: once you hold (object, version), ship it.
struct CopySendMsg {
  static constexpr MessageTag tag = MessageTag::CopySend;
  JobId copy_job = 0;
  ObjectId object = 0;
  uint64_t version = 0;
  WorkerId to = 0;

  void encode(WireWriter& w) const {
    w.varint(copy_job);
    w.varint(object);
    w.varint(version);
    w.varint(to);
  }

  static CopySendMsg decode(WireReader& r) {
    CopySendMsg m;
    m.copy_job = r.varint();
    m.object = r.varint();
    m.version = r.varint();
    m.to = WorkerId(r.varint());
    return m;
  }
};

/// Source worker -> destination worker: the payload itself.
struct CopyReceiveMsg {
  static constexpr MessageTag tag = MessageTag::CopyReceive;
  JobId copy_job = 0;
  ObjectId object = 0;
  uint64_t version = 0;
  std::vector<double> payload;

  void encode(WireWriter& w) const {
    w.varint(copy_job);
    w.varint(object);
    w.varint(version);
    w.doubles(payload);
  }

  static CopyReceiveMsg decode(WireReader& r) {
    CopyReceiveMsg m;
    m.copy_job = r.varint();
    m.object = r.varint();
    m.version = r.varint();
    m.payload = r.doubles();
    return m;
  }
};

enum class JobPhase : uint8_t {
  Done = 0,      // job complete (for copies: payload stored at the receiver)
  CopySent = 1,  // source-side half of a copy: payload left the holder
};

/// Worker -> controller completion report; controller -> worker relay for
/// dependencies that completed on another node.
struct JobDoneMsg {
  static constexpr MessageTag tag = MessageTag::JobDone;
  JobId job = 0;
  JobPhase phase = JobPhase::Done;

  void encode(WireWriter& w) const {
    w.varint(job);
    w.u8(uint8_t(phase));
  }

  static JobDoneMsg decode(WireReader& r) {
    JobDoneMsg m;
    m.job = r.varint();
    const uint8_t p = r.u8();
    if (p > 1) throw ProtocolError("bad job phase");
    m.phase = JobPhase(p);
    return m;
  }
};

/// Worker -> controller, once per profiling window: where the window's time
/// went. Blocked time is attributed to the workers whose unfinished outputs
/// the local queue was waiting on.
struct ProfileReportMsg {
  static constexpr MessageTag tag = MessageTag::ProfileReport;
  uint64_t window_index = 0;
  SimTime window_start = 0;
  SimTime window_len = 0;
  SimTime compute = 0;
  SimTime idle = 0;
  std::vector<std::pair<WorkerId, SimTime>> blocked_on;
  uint64_t jobs_done = 0;
  uint64_t queue_len = 0;

  void encode(WireWriter& w) const {
    w.varint(window_index);
    w.i64(window_start);
    w.i64(window_len);
    w.varint(uint64_t(compute));
    w.varint(uint64_t(idle));
    w.varint(blocked_on.size());
    for (const auto& [id, ns] : blocked_on) {
      w.varint(id);
      w.varint(uint64_t(ns));
    }
    w.varint(jobs_done);
    w.varint(queue_len);
  }

  static ProfileReportMsg decode(WireReader& r) {
    ProfileReportMsg m;
    m.window_index = r.varint();
    m.window_start = r.i64();
    m.window_len = r.i64();
    m.compute = SimTime(r.varint());
    m.idle = SimTime(r.varint());
    const uint64_t n = r.varint();
    for (uint64_t i = 0; i < n; ++i) {
      const WorkerId id = WorkerId(r.varint());
      m.blocked_on.emplace_back(id, SimTime(r.varint()));
    }
    m.jobs_done = r.varint();
    m.queue_len = r.varint();
    return m;
  }
};

/// Worker -> controller liveness ping. Empty body: six bytes framed.
struct HeartbeatMsg {
  static constexpr MessageTag tag = MessageTag::Heartbeat;
  void encode(WireWriter&) const {}
  static HeartbeatMsg decode(WireReader&) { return {}; }
};

/// Controller -> worker: persist these held instances as one shard file.
struct SaveShardMsg {
  static constexpr MessageTag tag = MessageTag::SaveShard;
  uint64_t checkpoint = 0;
  std::vector<std::pair<ObjectId, uint64_t>> entries;

  void encode(WireWriter& w) const {
    w.varint(checkpoint);
    w.varint(entries.size());
    for (const auto& [obj, ver] : entries) {
      w.varint(obj);
      w.varint(ver);
    }
  }

  static SaveShardMsg decode(WireReader& r) {
    SaveShardMsg m;
    m.checkpoint = r.varint();
    const uint64_t n = r.varint();
    for (uint64_t i = 0; i < n; ++i) {
      const ObjectId obj = r.varint();
      m.entries.emplace_back(obj, r.varint());
    }
    return m;
  }
};

/// Worker -> controller SaveShard ack. Per-entry payload hashes double as
/// the final-state digest when the controller requests a terminal save round.
struct SaveShardAck {
  static constexpr MessageTag tag = MessageTag::SaveShard;
  uint64_t checkpoint = 0;
  bool ok = false;
  uint64_t bytes = 0;
  std::vector<std::tuple<ObjectId, uint64_t, uint64_t>> entries;  // (object, version, hash)

  void encode(WireWriter& w) const {
    w.varint(checkpoint);
    w.u8(ok);
    w.varint(bytes);
    w.varint(entries.size());
    for (const auto& [obj, ver, hash] : entries) {
      w.varint(obj);
      w.varint(ver);
      w.u64(hash);
    }
  }

  static SaveShardAck decode(WireReader& r) {
    SaveShardAck m;
    m.checkpoint = r.varint();
    m.ok = r.u8() != 0;
    m.bytes = r.varint();
    const uint64_t n = r.varint();
    for (uint64_t i = 0; i < n; ++i) {
      const ObjectId obj = r.varint();
      const uint64_t ver = r.varint();
      m.entries.emplace_back(obj, ver, r.u64());
    }
    return m;
  }
};

/// Controller -> worker: load listed instances from the shard file. With
/// reset_first the worker drops all volatile state before loading.
struct RestoreShardMsg {
  static constexpr MessageTag tag = MessageTag::RestoreShard;
  uint64_t checkpoint = 0;
  bool reset_first = false;
  std::vector<std::pair<ObjectId, uint64_t>> entries;

  void encode(WireWriter& w) const {
    w.varint(checkpoint);
    w.u8(reset_first);
    w.varint(entries.size());
    for (const auto& [obj, ver] : entries) {
      w.varint(obj);
      w.varint(ver);
    }
  }

  static RestoreShardMsg decode(WireReader& r) {
    RestoreShardMsg m;
    m.checkpoint = r.varint();
    m.reset_first = r.u8() != 0;
    const uint64_t n = r.varint();
    for (uint64_t i = 0; i < n; ++i) {
      const ObjectId obj = r.varint();
      m.entries.emplace_back(obj, r.varint());
    }
    return m;
  }
};

/// Worker -> controller RestoreShard ack listing what actually loaded.
struct RestoreShardAck {
  static constexpr MessageTag tag = MessageTag::RestoreShard;
  uint64_t checkpoint = 0;
  bool ok = false;
  std::vector<std::pair<ObjectId, uint64_t>> loaded;

  void encode(WireWriter& w) const {
    w.varint(checkpoint);
    w.u8(ok);
    w.varint(loaded.size());
    for (const auto& [obj, ver] : loaded) {
      w.varint(obj);
      w.varint(ver);
    }
  }

  static RestoreShardAck decode(WireReader& r) {
    RestoreShardAck m;
    m.checkpoint = r.varint();
    m.ok = r.u8() != 0;
    const uint64_t n = r.varint();
    for (uint64_t i = 0; i < n; ++i) {
      const ObjectId obj = r.varint();
      m.loaded.emplace_back(obj, r.varint());
    }
    return m;
  }
};

/// Controller -> all workers: the partition map changed (rebalance or
/// rewind). Each worker owns one interval of the snake linearization.
struct ReassignPartitionsMsg {
  static constexpr MessageTag tag = MessageTag::ReassignPartitions;
  uint64_t epoch = 0;
  std::vector<std::tuple<WorkerId, int64_t, int64_t>> intervals;  // [lo, hi)

  void encode(WireWriter& w) const {
    w.varint(epoch);
    w.varint(intervals.size());
    for (const auto& [id, lo, hi] : intervals) {
      w.varint(id);
      w.varint(uint64_t(lo));
      w.varint(uint64_t(hi));
    }
  }

  static ReassignPartitionsMsg decode(WireReader& r) {
    ReassignPartitionsMsg m;
    m.epoch = r.varint();
    const uint64_t n = r.varint();
    for (uint64_t i = 0; i < n; ++i) {
      const WorkerId id = WorkerId(r.varint());
      const int64_t lo = int64_t(r.varint());
      const int64_t hi = int64_t(r.varint());
      m.intervals.emplace_back(id, lo, hi);
    }
    return m;
  }
};

/// Controller -> worker: shut down with this exit code.
struct TerminateMsg {
  static constexpr MessageTag tag = MessageTag::Terminate;
  uint32_t code = 0;
  std::string reason;

  void encode(WireWriter& w) const {
    w.varint(code);
    w.str(reason);
  }

  static TerminateMsg decode(WireReader& r) {
    TerminateMsg m;
    m.code = uint32_t(r.varint());
    m.reason = r.str();
    return m;
  }
};

template <typename Msg>
std::vector<uint8_t> encode_message(const Msg& m) {
  WireWriter w;
  m.encode(w);
  return frame(uint16_t(Msg::tag), w.buffer());
}

template <typename Msg>
Msg decode_message(const std::vector<uint8_t>& body) {
  WireReader r(body);
  Msg m = Msg::decode(r);
  r.expect_done();
  return m;
}

}  // namespace gridrun
