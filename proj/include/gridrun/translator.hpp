#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gridrun/common.hpp"
#include "gridrun/data_model.hpp"
#include "gridrun/job_graph.hpp"
#include "gridrun/region.hpp"
#include "gridrun/wire.hpp"

namespace gridrun {

/// Debug fill pattern: a quiet NaN with a recognizable mantissa. Cells a
/// kernel reads without a backing instance, or leaves unwritten in a write
/// region, surface as this exact bit pattern.
inline constexpr uint64_t kPoisonBits = 0x7FF80000DEADBEEFull;

inline double poison_value() { return bits_double(kPoisonBits); }
inline bool is_poison(double d) { return double_bits(d) == kPoisonBits; }

#ifdef NDEBUG
inline constexpr bool kPoisonFill = false;
#else
inline constexpr bool kPoisonFill = true;
#endif

inline double fill_value() { return kPoisonFill ? poison_value() : 0.0; }

/// Dense row-major window over a region: x varies fastest, then y, then z.
/// Cell payloads inside physical instances use the same layout over their
/// own region.
struct VariableView {
  Region box;
  std::vector<double> data;

  explicit VariableView(const Region& b) : box(b), data(size_t(b.volume()), fill_value()) {}
  VariableView() : VariableView(Region{}) {}

  size_t index(int64_t x, int64_t y = 0, int64_t z = 0) const {
    if (kPoisonFill && !box.contains(std::array<int64_t, 3>{x, y, z}))
      throw InvariantViolation("view access outside " + box.str());
    const int64_t sx = box.side(0), sy = box.side(1);
    return size_t(((z - box.lo[2]) * sy + (y - box.lo[1])) * sx + (x - box.lo[0]));
  }

  double at(int64_t x, int64_t y = 0, int64_t z = 0) const { return data[index(x, y, z)]; }
  double& at(int64_t x, int64_t y = 0, int64_t z = 0) { return data[index(x, y, z)]; }
};

inline Region bounding_box(const std::vector<Region>& regions) {
  if (regions.empty()) throw InvariantViolation("bounding box of nothing");
  Region box = regions[0];
  for (const Region& r : regions)
    for (int a = 0; a < box.dims; ++a) {
      box.lo[a] = std::min(box.lo[a], r.lo[a]);
      box.hi[a] = std::max(box.hi[a], r.hi[a]);
    }
  return box;
}

/// Copies the cells of `region` from one row-major buffer to another. Each
/// buffer is laid out over its own box, which must contain `region`.
inline void blit(const Region& region, const std::vector<double>& src, const Region& src_box,
                 std::vector<double>& dst, const Region& dst_box) {
  const int64_t sxs = src_box.side(0), sys = src_box.side(1);
  const int64_t sxd = dst_box.side(0), syd = dst_box.side(1);
  for (int64_t z = region.lo[2]; z < region.hi[2]; ++z) {
    for (int64_t y = region.lo[1]; y < region.hi[1]; ++y) {
      const int64_t si = ((z - src_box.lo[2]) * sys + (y - src_box.lo[1])) * sxs +
                         (region.lo[0] - src_box.lo[0]);
      const int64_t di = ((z - dst_box.lo[2]) * syd + (y - dst_box.lo[1])) * sxd +
                         (region.lo[0] - dst_box.lo[0]);
      std::memcpy(dst.data() + di, src.data() + si, size_t(region.side(0)) * sizeof(double));
    }
  }
}

/// Translates between the runtime's object store and the dense arrays
/// kernels expect. Gather assembles read instances into one window; scatter
/// splits a window back into per-object write payloads, bumping nothing
/// itself: versions come from the caller's bindings.
class Translator {
 public:
  Translator(const ObjectRegistry& registry, InstanceStore& store)
      : registry_(registry), store_(store) {}

  /// Assembles the listed instances (all of one grid variable) over the
  /// bounding box of their regions. Uncovered cells keep the fill pattern.
  VariableView gather(const std::vector<std::pair<ObjectId, uint64_t>>& reads) const {
    std::vector<Region> regions;
    regions.reserve(reads.size());
    for (const auto& [obj, _] : reads) regions.push_back(require_region(obj));
    VariableView view(bounding_box(regions));
    for (size_t i = 0; i < reads.size(); ++i) {
      const auto& [obj, version] = reads[i];
      auto payload = store_.get(obj, version);
      if (!payload)
        throw InvariantViolation("gather: missing instance " + std::to_string(obj) + "@" +
                                 std::to_string(version));
      if (int64_t(payload->size()) != regions[i].volume())
        throw InvariantViolation("gather: instance " + std::to_string(obj) + "@" +
                                 std::to_string(version) + " is an unwritten placeholder");
      blit(regions[i], *payload, regions[i], view.data, view.box);
    }
    return view;
  }

  /// Extracts each write region from the view and installs it as the
  /// instance payload at the bound version. With expect_placeholder the
  /// instance must already exist (the runtime pre-creates write targets);
  /// under the debug fill any poison cell in a write region means the kernel
  /// skipped cells and is an invariant violation.
  void scatter(const VariableView& view,
               const std::vector<std::pair<ObjectId, uint64_t>>& writes,
               bool expect_placeholder) {
    for (const auto& [obj, version] : writes) {
      const Region region = require_region(obj);
      if (!view.box.contains(region))
        throw InvariantViolation("scatter: view " + view.box.str() + " does not cover " +
                                 region.str());
      if (expect_placeholder && !store_.has(obj, version))
        throw InvariantViolation("scatter: no placeholder for " + std::to_string(obj) + "@" +
                                 std::to_string(version));
      std::vector<double> payload(size_t(region.volume()));
      blit(region, view.data, view.box, payload, region);
      if (kPoisonFill)
        for (double d : payload)
          if (is_poison(d))
            throw InvariantViolation("scatter: kernel left unwritten cells in " + region.str());
      store_.put(obj, version, std::move(payload));
    }
  }

  double read_scalar(ObjectId obj, uint64_t version) const {
    auto payload = store_.get(obj, version);
    if (!payload || payload->size() != 1)
      throw InvariantViolation("read_scalar: missing instance " + std::to_string(obj) + "@" +
                               std::to_string(version));
    return (*payload)[0];
  }

  void write_scalar(ObjectId obj, uint64_t version, double value, bool expect_placeholder) {
    if (expect_placeholder && !store_.has(obj, version))
      throw InvariantViolation("write_scalar: no placeholder for " + std::to_string(obj));
    store_.put(obj, version, std::vector<double>{value});
  }

  const ObjectRegistry& registry() const { return registry_; }

 private:
  Region require_region(ObjectId obj) const {
    const LogicalObject& o = registry_.object(obj);
    if (!o.has_region) throw InvariantViolation("object has no region");
    return o.region;
  }

  const ObjectRegistry& registry_;
  InstanceStore& store_;
};

/// Everything a kernel sees while running one job: its parameters, its bound
/// read and write instances grouped by variable, and a spawn buffer if it is
/// a parent. Shared verbatim between the distributed workers and the serial
/// reference executor so both run the same kernel code.
class JobContext {
 public:
  JobContext(const ObjectRegistry& registry, InstanceStore& store, JobSpec spec,
             const std::vector<uint64_t>& read_versions,
             const std::vector<uint64_t>& write_versions, bool expect_placeholder)
      : registry_(registry),
        translator_(registry, store),
        spec_(std::move(spec)),
        expect_placeholder_(expect_placeholder) {
    for (size_t i = 0; i < spec_.reads.size(); ++i)
      reads_[registry.object(spec_.reads[i]).variable].emplace_back(spec_.reads[i],
                                                                    read_versions.at(i));
    for (size_t i = 0; i < spec_.writes.size(); ++i)
      writes_[registry.object(spec_.writes[i]).variable].emplace_back(spec_.writes[i],
                                                                      write_versions.at(i));
  }

  JobId id() const { return spec_.id; }
  uint32_t function() const { return spec_.function; }
  WireReader params() const { return WireReader(spec_.params); }
  const ObjectRegistry& registry() const { return registry_; }

  /// Dense window over everything this job reads of `variable`.
  VariableView gather(const std::string& variable) const {
    return translator_.gather(read_set(variable));
  }

  /// Fresh fill-initialized window covering this job's write regions of
  /// `variable`, for kernels that do not gather the same variable.
  VariableView make_write_view(const std::string& variable) const {
    std::vector<Region> regions;
    for (const auto& [obj, _] : write_set(variable))
      regions.push_back(registry_.object(obj).region);
    return VariableView(bounding_box(regions));
  }

  void scatter(const std::string& variable, const VariableView& view) {
    translator_.scatter(view, write_set(variable), expect_placeholder_);
  }

  double read_scalar(const std::string& variable) const {
    const auto& rs = read_set(variable);
    if (rs.size() != 1) throw InvariantViolation("read_scalar: want one instance of " + variable);
    return translator_.read_scalar(rs[0].first, rs[0].second);
  }

  /// All read instances of `variable` as values, in object id order (the
  /// partition linearization), for deterministic reductions.
  std::vector<double> read_scalars(const std::string& variable) const {
    std::vector<double> out;
    for (const auto& [obj, ver] : read_set(variable))
      out.push_back(translator_.read_scalar(obj, ver));
    return out;
  }

  void write_scalar(const std::string& variable, double value) {
    const auto& ws = write_set(variable);
    if (ws.size() != 1) throw InvariantViolation("write_scalar: want one instance of " + variable);
    translator_.write_scalar(ws[0].first, ws[0].second, value, expect_placeholder_);
  }

  /// The write regions of `variable` this job owns, canonical order.
  std::vector<Region> write_regions(const std::string& variable) const {
    std::vector<Region> out;
    for (const auto& [obj, _] : write_set(variable)) out.push_back(registry_.object(obj).region);
    return out;
  }

  /// Parents call this to emit children. Ids and before references are
  /// batch-relative indices starting at 0.
  void spawn(JobSpec child) {
    if (!spec_.parent) throw InvariantViolation("non-parent job tried to spawn");
    spawned_.push_back(std::move(child));
  }

  std::vector<JobSpec>& spawned() { return spawned_; }

 private:
  const std::vector<std::pair<ObjectId, uint64_t>>& read_set(const std::string& variable) const {
    static const std::vector<std::pair<ObjectId, uint64_t>> kEmpty;
    auto it = reads_.find(registry_.variable_index(variable));
    return it == reads_.end() ? kEmpty : it->second;
  }

  const std::vector<std::pair<ObjectId, uint64_t>>& write_set(const std::string& variable) const {
    static const std::vector<std::pair<ObjectId, uint64_t>> kEmpty;
    auto it = writes_.find(registry_.variable_index(variable));
    return it == writes_.end() ? kEmpty : it->second;
  }

  const ObjectRegistry& registry_;
  Translator translator_;
  JobSpec spec_;  // by value: the context may outlive the dispatch frame
  bool expect_placeholder_;
  std::map<uint32_t, std::vector<std::pair<ObjectId, uint64_t>>> reads_;
  std::map<uint32_t, std::vector<std::pair<ObjectId, uint64_t>>> writes_;
  std::vector<JobSpec> spawned_;
};

}  // namespace gridrun
