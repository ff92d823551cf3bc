#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "gridrun/common.hpp"
#include "gridrun/data_model.hpp"
#include "gridrun/job_graph.hpp"
#include "gridrun/message.hpp"
#include "gridrun/wire.hpp"

namespace gridrun {

/// Durable storage for checkpoint shards. One file per (checkpoint, worker),
/// written to a temp name and renamed, so a crash mid-save never corrupts an
/// earlier checkpoint. Entries carry their own checksums; torn or corrupt
/// tails are detected on load and reported as incomplete.
///
/// File layout, little-endian throughout:
///   u32 magic, u64 checkpoint, u32 worker, u32 entry count
///   per entry: u64 object, u64 version, u64 payload bytes, u64 fnv1a64,
///              payload (doubles as raw bits)
///   u64 fnv1a64 over everything above (whole-file integrity)
class ShardStore {
 public:
  static constexpr uint32_t kMagic = 0x31485347;  // "GSH1"

  struct Entry {
    ObjectId object = 0;
    uint64_t version = 0;
    std::vector<double> payload;
  };

  struct LoadResult {
    std::vector<Entry> entries;
    bool complete = false;  // file present, all entries intact
  };

  explicit ShardStore(std::string root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
  }

  const std::string& root() const { return root_; }

  std::string shard_path(uint64_t checkpoint, WorkerId worker) const {
    return root_ + "/ckpt_" + std::to_string(checkpoint) + "_w" + std::to_string(worker) +
           ".shard";
  }

  uint64_t save(uint64_t checkpoint, WorkerId worker, const std::vector<Entry>& entries) const {
    WireWriter w;
    w.u32(kMagic);
    w.u64(checkpoint);
    w.u32(worker);
    w.u32(uint32_t(entries.size()));
    for (const Entry& e : entries) {
      w.u64(e.object);
      w.u64(e.version);
      const uint64_t bytes = e.payload.size() * sizeof(double);
      w.u64(bytes);
      w.u64(fnv1a64(e.payload.data(), bytes));
      for (double d : e.payload) w.f64(d);
    }
    w.u64(fnv1a64(w.buffer()));
    const std::string path = shard_path(checkpoint, worker);
    write_file_atomic(path, w.buffer());
    return w.size();
  }

  LoadResult load(uint64_t checkpoint, WorkerId worker) const {
    LoadResult out;
    std::vector<uint8_t> bytes;
    if (!read_file(shard_path(checkpoint, worker), bytes)) return out;
    if (bytes.size() < 8) return out;
    {
      WireReader tail(bytes.data() + bytes.size() - 8, 8);
      if (tail.u64() != fnv1a64(bytes.data(), bytes.size() - 8)) return out;
      bytes.resize(bytes.size() - 8);
    }
    try {
      WireReader r(bytes);
      if (r.u32() != kMagic) return out;
      if (r.u64() != checkpoint) return out;
      if (WorkerId(r.u32()) != worker) return out;
      const uint32_t count = r.u32();
      for (uint32_t i = 0; i < count; ++i) {
        Entry e;
        e.object = r.u64();
        e.version = r.u64();
        const uint64_t len = r.u64();
        const uint64_t sum = r.u64();
        if (len % sizeof(double) != 0 || r.remaining() < len) return out;  // torn tail
        e.payload.resize(len / sizeof(double));
        for (auto& d : e.payload) d = r.f64();
        if (fnv1a64(e.payload.data(), len) != sum) return out;  // corrupt entry
        out.entries.push_back(std::move(e));
      }
      out.complete = r.done();
    } catch (const ProtocolError&) {
      out.complete = false;  // truncated mid-header
    }
    return out;
  }

  bool exists(uint64_t checkpoint, WorkerId worker) const {
    return std::filesystem::exists(shard_path(checkpoint, worker));
  }

  void remove_checkpoint(uint64_t checkpoint) const {
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(root_, ec)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("ckpt_" + std::to_string(checkpoint) + "_", 0) == 0)
        std::filesystem::remove(entry.path(), ec);
    }
  }

  static void write_file_atomic(const std::string& path, const std::vector<uint8_t>& bytes) {
    const std::string tmp = path + ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw InvariantViolation("cannot write " + tmp);
      f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
      if (!f) throw InvariantViolation("short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  static bool read_file(const std::string& path, std::vector<uint8_t>& out) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) return false;
    const std::streamsize n = f.tellg();
    f.seekg(0);
    out.resize(size_t(n));
    f.read(reinterpret_cast<char*>(out.data()), n);
    return bool(f);
  }

 private:
  std::string root_;
};

/// The controller's durable record of one committed checkpoint: where every
/// live object version is sharded, which parents to re-dispatch on rewind,
/// and the allocator and partition state to resume from. Written atomically
/// after all shard acks; an aborted checkpoint leaves the previous manifest
/// as the recovery point.
struct CheckpointManifest {
  uint64_t checkpoint = 0;
  uint64_t iteration = 0;
  JobId next_job_id = 1;
  uint64_t reassign_epoch = 0;
  std::vector<JobSpec> parents;  // pending boundary parents, before sets cleared
  std::vector<std::pair<WorkerId, JobId>> parent_assignment;  // parallel to parents
  std::vector<uint64_t> object_versions;  // latest version per object id
  // per saved instance: object, version, workers whose shards hold it
  std::vector<std::tuple<ObjectId, uint64_t, std::vector<WorkerId>>> shard_map;
  std::vector<std::tuple<WorkerId, int64_t, int64_t>> partition_intervals;

  void encode(WireWriter& w) const {
    w.u32(ShardStore::kMagic + 1);
    w.varint(checkpoint);
    w.varint(iteration);
    w.varint(next_job_id);
    w.varint(reassign_epoch);
    w.varint(parents.size());
    for (const auto& p : parents) encode_job_spec(w, p);
    for (const auto& [worker, job] : parent_assignment) {
      w.varint(worker);
      w.varint(job);
    }
    w.varint(object_versions.size());
    for (uint64_t v : object_versions) w.varint(v);
    w.varint(shard_map.size());
    for (const auto& [obj, ver, holders] : shard_map) {
      w.varint(obj);
      w.varint(ver);
      w.varint(holders.size());
      for (WorkerId h : holders) w.varint(h);
    }
    w.varint(partition_intervals.size());
    for (const auto& [id, lo, hi] : partition_intervals) {
      w.varint(id);
      w.varint(uint64_t(lo));
      w.varint(uint64_t(hi));
    }
  }

  static CheckpointManifest decode(WireReader& r) {
    CheckpointManifest m;
    if (r.u32() != ShardStore::kMagic + 1) throw ProtocolError("bad manifest magic");
    m.checkpoint = r.varint();
    m.iteration = r.varint();
    m.next_job_id = r.varint();
    m.reassign_epoch = r.varint();
    const uint64_t np = r.varint();
    for (uint64_t i = 0; i < np; ++i) m.parents.push_back(decode_job_spec(r));
    for (uint64_t i = 0; i < np; ++i) {
      const WorkerId worker = WorkerId(r.varint());
      m.parent_assignment.emplace_back(worker, r.varint());
    }
    const uint64_t nv = r.varint();
    for (uint64_t i = 0; i < nv; ++i) m.object_versions.push_back(r.varint());
    const uint64_t ns = r.varint();
    for (uint64_t i = 0; i < ns; ++i) {
      const ObjectId obj = r.varint();
      const uint64_t ver = r.varint();
      std::vector<WorkerId> holders(r.varint());
      for (auto& h : holders) h = WorkerId(r.varint());
      m.shard_map.emplace_back(obj, ver, std::move(holders));
    }
    const uint64_t ni = r.varint();
    for (uint64_t i = 0; i < ni; ++i) {
      const WorkerId id = WorkerId(r.varint());
      const int64_t lo = int64_t(r.varint());
      const int64_t hi = int64_t(r.varint());
      m.partition_intervals.emplace_back(id, lo, hi);
    }
    return m;
  }

  /// Serialized with a trailing checksum; a torn write fails to parse and the
  /// previous manifest stays authoritative.
  std::vector<uint8_t> to_bytes() const {
    WireWriter w;
    encode(w);
    const uint64_t sum = fnv1a64(w.buffer());
    w.u64(sum);
    return w.take();
  }

  static bool from_bytes(const std::vector<uint8_t>& bytes, CheckpointManifest& out) {
    if (bytes.size() < 8) return false;
    const uint64_t sum = fnv1a64(bytes.data(), bytes.size() - 8);
    WireReader tail(bytes.data() + bytes.size() - 8, 8);
    if (tail.u64() != sum) return false;
    try {
      WireReader r(bytes.data(), bytes.size() - 8);
      out = decode(r);
      r.expect_done();
      return true;
    } catch (const ProtocolError&) {
      return false;
    }
  }
};

/// Manifest directory helper: save under the checkpoint id, find the newest
/// parseable manifest on recovery.
class ManifestStore {
 public:
  explicit ManifestStore(std::string root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_);
  }

  std::string path(uint64_t checkpoint) const {
    return root_ + "/manifest_" + std::to_string(checkpoint) + ".bin";
  }

  void save(const CheckpointManifest& m) const {
    ShardStore::write_file_atomic(path(m.checkpoint), m.to_bytes());
  }

  bool load(uint64_t checkpoint, CheckpointManifest& out) const {
    std::vector<uint8_t> bytes;
    if (!ShardStore::read_file(path(checkpoint), bytes)) return false;
    return CheckpointManifest::from_bytes(bytes, out);
  }

  /// Highest checkpoint whose manifest parses cleanly; 0 if none.
  uint64_t latest() const {
    uint64_t best = 0;
    std::error_code ec;
    for (const auto& entry : std::filesystem::directory_iterator(root_, ec)) {
      const std::string name = entry.path().filename().string();
      uint64_t id = 0;
      if (std::sscanf(name.c_str(), "manifest_%lu.bin", &id) == 1 && id > best) {
        CheckpointManifest m;
        if (load(id, m)) best = id;
      }
    }
    return best;
  }

 private:
  std::string root_;
};

}  // namespace gridrun
