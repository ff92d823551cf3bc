#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include "gridrun/common.hpp"
#include "gridrun/region.hpp"

namespace gridrun {

enum class VariableKind : uint8_t {
  Grid,             // one object per tiling region of the domain
  PartitionScalar,  // one object per partition, pinned to the partition's low corner
  GlobalScalar,     // a single object with no region
};

struct VariableSpec {
  std::string name;
  VariableKind kind = VariableKind::Grid;
  int64_t ghost_width = -1;  // grid only; -1 means the domain default
};

/// A named, versioned unit of simulation state. The id is dense and stable
/// for a given domain and variable list; versions are monotone, starting at 0
/// when the instance is created and incrementing by 1 per completed write.
struct LogicalObject {
  ObjectId id = 0;
  uint32_t variable = 0;
  bool has_region = false;     // false only for global scalars
  Region region;               // valid iff has_region
  int64_t home_partition = -1; // linear partition index; -1 for global scalars
};

/// Derives the full object table from the domain and variable declarations.
/// Enumeration order is deterministic: variables in declaration order, then
/// regions in canonical order, so ids agree across controller, workers, and
/// the serial oracle.
class ObjectRegistry {
 public:
  ObjectRegistry(DomainSpec domain, std::vector<VariableSpec> variables)
      : domain_(std::move(domain)), variables_(std::move(variables)) {
    domain_.validate();
    for (uint32_t v = 0; v < variables_.size(); ++v) {
      const auto& var = variables_[v];
      var_begin_.push_back(objects_.size());
      switch (var.kind) {
        case VariableKind::Grid: {
          const int64_t gw =
              var.ghost_width < 0 ? domain_.default_ghost_width : var.ghost_width;
          grid_ghost_width_.push_back(gw);
          for (const auto& region : enumerate_domain_regions(domain_, gw))
            add_object(v, region, partition_of_region(region));
          break;
        }
        case VariableKind::PartitionScalar: {
          grid_ghost_width_.push_back(-1);
          for (const auto& index : enumerate_partitions(domain_)) {
            Region cell = domain_.partition_box(index);
            for (int a = 0; a < domain_.dims; ++a) cell.hi[a] = cell.lo[a] + 1;
            add_object(v, cell, partition_linear_index(domain_, index));
          }
          break;
        }
        case VariableKind::GlobalScalar: {
          grid_ghost_width_.push_back(-1);
          LogicalObject obj;
          obj.id = objects_.size();
          obj.variable = v;
          obj.has_region = false;
          objects_.push_back(obj);
          break;
        }
      }
    }
    var_begin_.push_back(objects_.size());
  }

  const DomainSpec& domain() const { return domain_; }
  const std::vector<VariableSpec>& variables() const { return variables_; }
  size_t size() const { return objects_.size(); }
  const LogicalObject& object(ObjectId id) const { return objects_.at(id); }

  uint32_t variable_index(const std::string& name) const {
    for (uint32_t v = 0; v < variables_.size(); ++v)
      if (variables_[v].name == name) return v;
    throw ConfigError("unknown variable: " + name);
  }

  int64_t grid_ghost_width(uint32_t variable) const { return grid_ghost_width_.at(variable); }

  std::pair<ObjectId, ObjectId> variable_range(uint32_t variable) const {
    return {var_begin_.at(variable), var_begin_.at(variable + 1)};
  }

  /// Objects of `variable` whose region intersects `query` (read expansion).
  std::vector<ObjectId> objects_intersecting(uint32_t variable, const Region& query) const {
    std::vector<ObjectId> out;
    auto [b, e] = variable_range(variable);
    for (ObjectId id = b; id < e; ++id) {
      const auto& o = objects_[id];
      if (o.has_region && overlap_volume(o.region, query) > 0) out.push_back(id);
    }
    return out;
  }

  /// Objects of `variable` whose region is fully inside `query`. Write sets
  /// must tile their declared region exactly; the caller checks coverage.
  std::vector<ObjectId> objects_inside(uint32_t variable, const Region& query) const {
    std::vector<ObjectId> out;
    auto [b, e] = variable_range(variable);
    for (ObjectId id = b; id < e; ++id) {
      const auto& o = objects_[id];
      if (o.has_region && query.contains(o.region)) out.push_back(id);
    }
    return out;
  }

  ObjectId partition_scalar(uint32_t variable, int64_t partition_linear) const {
    auto [b, e] = variable_range(variable);
    if (partition_linear < 0 || b + partition_linear >= e)
      throw InvariantViolation("partition scalar lookup out of range");
    return b + partition_linear;
  }

  ObjectId global_scalar(uint32_t variable) const {
    auto [b, e] = variable_range(variable);
    if (e != b + 1) throw InvariantViolation("variable is not a global scalar");
    return b;
  }

  /// Payload length in doubles.
  int64_t payload_len(ObjectId id) const {
    const auto& o = objects_.at(id);
    return o.has_region ? o.region.volume() : 1;
  }

  int64_t partition_of_region(const Region& r) const {
    std::array<int64_t, 3> index{0, 0, 0};
    for (int a = 0; a < domain_.dims; ++a) {
      index[a] = r.lo[a] / domain_.partition_side(a);
      if (index[a] < 0 || index[a] >= domain_.partitions[a])
        throw InvariantViolation("region outside domain: " + r.str());
    }
    return partition_linear_index(domain_, index);
  }

 private:
  void add_object(uint32_t variable, const Region& region, int64_t partition) {
    LogicalObject obj;
    obj.id = objects_.size();
    obj.variable = variable;
    obj.has_region = true;
    obj.region = region;
    obj.home_partition = partition;
    objects_.push_back(obj);
  }

  DomainSpec domain_;
  std::vector<VariableSpec> variables_;
  std::vector<LogicalObject> objects_;
  std::vector<ObjectId> var_begin_;        // size = variables + 1
  std::vector<int64_t> grid_ghost_width_;  // per variable, -1 for scalars
};

/// Controller-side view of which versions exist and where physical instances
/// live. Version 0 is the created initial instance; holders of it are all
/// creating workers.
class VersionMap {
 public:
  explicit VersionMap(size_t n_objects) : latest_(n_objects, 0) {}

  size_t size() const { return latest_.size(); }
  uint64_t latest(ObjectId id) const { return latest_.at(id); }

  uint64_t bump(ObjectId id) { return ++latest_.at(id); }

  void set_latest(ObjectId id, uint64_t version) { latest_.at(id) = version; }

  void add_holder(ObjectId id, uint64_t version, WorkerId w) {
    auto& hs = holders_[{id, version}];
    auto it = std::lower_bound(hs.begin(), hs.end(), w);
    if (it == hs.end() || *it != w) hs.insert(it, w);
  }

  void remove_holder(ObjectId id, uint64_t version, WorkerId w) {
    auto it = holders_.find({id, version});
    if (it == holders_.end()) return;
    auto& hs = it->second;
    hs.erase(std::remove(hs.begin(), hs.end(), w), hs.end());
    if (hs.empty()) holders_.erase(it);
  }

  /// Sorted holder list, empty if no worker holds that version.
  std::vector<WorkerId> holders(ObjectId id, uint64_t version) const {
    auto it = holders_.find({id, version});
    return it == holders_.end() ? std::vector<WorkerId>{} : it->second;
  }

  bool held_by(ObjectId id, uint64_t version, WorkerId w) const {
    auto it = holders_.find({id, version});
    if (it == holders_.end()) return false;
    return std::binary_search(it->second.begin(), it->second.end(), w);
  }

  /// Forget every instance on a crashed or reset worker.
  void drop_worker(WorkerId w) {
    for (auto it = holders_.begin(); it != holders_.end();) {
      auto& hs = it->second;
      hs.erase(std::remove(hs.begin(), hs.end(), w), hs.end());
      it = hs.empty() ? holders_.erase(it) : std::next(it);
    }
  }

  void clear_holders() { holders_.clear(); }

  /// Instances older than the latest version of their object, eligible for
  /// reclamation once no scheduled reader needs them.
  std::vector<std::pair<ObjectId, uint64_t>> stale_instances() const {
    std::vector<std::pair<ObjectId, uint64_t>> out;
    for (const auto& [key, hs] : holders_)
      if (key.second < latest_.at(key.first)) out.push_back(key);
    return out;
  }

  const std::map<std::pair<ObjectId, uint64_t>, std::vector<WorkerId>>& all_holders() const {
    return holders_;
  }

 private:
  std::vector<uint64_t> latest_;
  std::map<std::pair<ObjectId, uint64_t>, std::vector<WorkerId>> holders_;
};

/// Worker-side storage for physical instances. Payloads are immutable and
/// shared so a copy in flight does not duplicate the buffer. Internally
/// locked: kernels on pool threads and the event loop touch it concurrently
/// under the socket transport.
class InstanceStore {
 public:
  using Payload = std::shared_ptr<const std::vector<double>>;

  void put(ObjectId id, uint64_t version, std::vector<double> data) {
    put(id, version, std::make_shared<const std::vector<double>>(std::move(data)));
  }

  void put(ObjectId id, uint64_t version, Payload data) {
    std::lock_guard<std::mutex> lock(mu_);
    data_[{id, version}] = std::move(data);
  }

  Payload get(ObjectId id, uint64_t version) const {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = data_.find({id, version});
    return it == data_.end() ? nullptr : it->second;
  }

  bool has(ObjectId id, uint64_t version) const {
    std::lock_guard<std::mutex> lock(mu_);
    return data_.count({id, version}) > 0;
  }

  void erase(ObjectId id, uint64_t version) {
    std::lock_guard<std::mutex> lock(mu_);
    data_.erase({id, version});
  }

  /// Drop every version of `id` strictly below `version`. The caller is
  /// responsible for proving nothing can still read or resend them.
  void prune_below(ObjectId id, uint64_t version) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = data_.lower_bound({id, 0});
    while (it != data_.end() && it->first.first == id && it->first.second < version)
      it = data_.erase(it);
  }

  void clear() {
    std::lock_guard<std::mutex> lock(mu_);
    data_.clear();
  }

  size_t size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return data_.size();
  }

  std::map<std::pair<ObjectId, uint64_t>, Payload> snapshot() const {
    std::lock_guard<std::mutex> lock(mu_);
    return data_;
  }

  /// Latest version held per object, for checkpointing and final hashes.
  std::map<ObjectId, uint64_t> latest_held() const {
    std::lock_guard<std::mutex> lock(mu_);
    std::map<ObjectId, uint64_t> out;
    for (const auto& [key, _] : data_) {
      auto it = out.find(key.first);
      if (it == out.end() || it->second < key.second) out[key.first] = key.second;
    }
    return out;
  }

 private:
  mutable std::mutex mu_;
  std::map<std::pair<ObjectId, uint64_t>, Payload> data_;
};

inline std::vector<uint8_t> doubles_to_bytes(const std::vector<double>& v) {
  std::vector<uint8_t> out(v.size() * sizeof(double));
  if (!v.empty()) std::memcpy(out.data(), v.data(), out.size());
  return out;
}

inline std::vector<double> bytes_to_doubles(const uint8_t* data, size_t n) {
  if (n % sizeof(double) != 0) throw ProtocolError("payload length not a multiple of 8");
  std::vector<double> out(n / sizeof(double));
  if (n) std::memcpy(out.data(), data, n);
  return out;
}

inline std::vector<double> bytes_to_doubles(const std::vector<uint8_t>& bytes) {
  return bytes_to_doubles(bytes.data(), bytes.size());
}

inline uint64_t payload_hash(const std::vector<double>& v) {
  return fnv1a64(v.data(), v.size() * sizeof(double));
}

}  // namespace gridrun
