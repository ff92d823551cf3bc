#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gridrun/common.hpp"

namespace gridrun {

inline constexpr int kMaxDims = 3;

/// Axis-aligned integer cell box, half-open per axis: [lo, hi).
/// Unused axes (beyond dims) are pinned to [0, 1) so volume math is uniform.
struct Region {
  int dims = 1;
  std::array<int64_t, 3> lo{0, 0, 0};
  std::array<int64_t, 3> hi{1, 1, 1};

  int64_t side(int axis) const { return hi[axis] - lo[axis]; }

  int64_t volume() const {
    int64_t v = 1;
    for (int a = 0; a < dims; ++a) v *= side(a);
    return v;
  }

  bool valid() const {
    for (int a = 0; a < dims; ++a)
      if (lo[a] >= hi[a]) return false;
    for (int a = dims; a < kMaxDims; ++a)
      if (lo[a] != 0 || hi[a] != 1) return false;
    return true;
  }

  bool contains(std::array<int64_t, 3> cell) const {
    for (int a = 0; a < dims; ++a)
      if (cell[a] < lo[a] || cell[a] >= hi[a]) return false;
    return true;
  }

  bool contains(const Region& r) const {
    for (int a = 0; a < dims; ++a)
      if (r.lo[a] < lo[a] || r.hi[a] > hi[a]) return false;
    return true;
  }

  friend bool operator==(const Region& a, const Region& b) {
    return a.dims == b.dims && a.lo == b.lo && a.hi == b.hi;
  }

  std::string str() const {
    std::string s = "[";
    for (int a = 0; a < dims; ++a) {
      if (a) s += ",";
      s += std::to_string(lo[a]) + ".." + std::to_string(hi[a]);
    }
    return s + ")";
  }
};

inline Region region1(int64_t lo, int64_t hi) { return Region{1, {lo, 0, 0}, {hi, 1, 1}}; }

inline Region region2(int64_t lx, int64_t ly, int64_t hx, int64_t hy) {
  return Region{2, {lx, ly, 0}, {hx, hy, 1}};
}

inline Region region3(std::array<int64_t, 3> lo, std::array<int64_t, 3> hi) {
  return Region{3, lo, hi};
}

/// Canonical ordering: lexicographic by (lo[0], lo[1], lo[2]); ties by hi.
/// Used wherever enumeration order must be deterministic.
inline bool region_less(const Region& a, const Region& b) {
  if (a.lo != b.lo) return a.lo < b.lo;
  return a.hi < b.hi;
}

inline std::optional<Region> intersect(const Region& a, const Region& b) {
  if (a.dims != b.dims) throw InvariantViolation("intersect: dimensionality mismatch");
  Region r;
  r.dims = a.dims;
  for (int a_ = 0; a_ < a.dims; ++a_) {
    r.lo[a_] = std::max(a.lo[a_], b.lo[a_]);
    r.hi[a_] = std::min(a.hi[a_], b.hi[a_]);
    if (r.lo[a_] >= r.hi[a_]) return std::nullopt;
  }
  return r;
}

inline int64_t overlap_volume(const Region& a, const Region& b) {
  auto r = intersect(a, b);
  return r ? r->volume() : 0;
}

enum class StripRole : uint8_t { ReceiveLeft, SendLeft, Central, SendRight, ReceiveRight };

inline bool strip_owned(StripRole r) {
  return r == StripRole::SendLeft || r == StripRole::Central || r == StripRole::SendRight;
}

struct AxisStrip {
  int64_t lo = 0;  // local coordinates; receive strips overhang [0, length)
  int64_t hi = 0;
  StripRole role = StripRole::Central;
};

/// Splits one partition axis of `length` cells into ghost/central strips,
/// ordered left to right. Strips facing an absent neighbor are omitted and
/// the central region absorbs the freed cells. With ghost_width 0 the whole
/// axis is a single central strip.
inline std::vector<AxisStrip> decompose_axis(int64_t length, int64_t ghost_width,
                                             bool has_left_neighbor, bool has_right_neighbor) {
  if (length <= 2 * ghost_width)
    throw ConfigError("decompose_axis: length " + std::to_string(length) +
                      " leaves no central region for ghost width " + std::to_string(ghost_width));
  std::vector<AxisStrip> strips;
  if (ghost_width == 0) {
    strips.push_back({0, length, StripRole::Central});
    return strips;
  }
  const int64_t g = ghost_width;
  if (has_left_neighbor) {
    strips.push_back({-g, 0, StripRole::ReceiveLeft});
    strips.push_back({0, g, StripRole::SendLeft});
  }
  strips.push_back({has_left_neighbor ? g : 0, has_right_neighbor ? length - g : length,
                    StripRole::Central});
  if (has_right_neighbor) {
    strips.push_back({length - g, length, StripRole::SendRight});
    strips.push_back({length, length + g, StripRole::ReceiveRight});
  }
  return strips;
}

/// Simulation domain: global extent, uniform partition grid, and per-variable
/// ghost widths (falling back to default_ghost_width).
struct DomainSpec {
  int dims = 1;
  std::array<int64_t, 3> extent{1, 1, 1};
  std::array<int64_t, 3> partitions{1, 1, 1};
  int64_t default_ghost_width = 1;
  std::map<std::string, int64_t> ghost_width_overrides;

  int64_t ghost_width(const std::string& variable) const {
    auto it = ghost_width_overrides.find(variable);
    return it == ghost_width_overrides.end() ? default_ghost_width : it->second;
  }

  int64_t partition_side(int axis) const { return extent[axis] / partitions[axis]; }

  int64_t partition_count() const {
    int64_t n = 1;
    for (int a = 0; a < dims; ++a) n *= partitions[a];
    return n;
  }

  Region domain_box() const {
    Region r;
    r.dims = dims;
    for (int a = 0; a < dims; ++a) {
      r.lo[a] = 0;
      r.hi[a] = extent[a];
    }
    return r;
  }

  Region partition_box(std::array<int64_t, 3> index) const {
    Region r;
    r.dims = dims;
    for (int a = 0; a < dims; ++a) {
      r.lo[a] = index[a] * partition_side(a);
      r.hi[a] = r.lo[a] + partition_side(a);
    }
    return r;
  }

  void validate() const {
    if (dims < 1 || dims > kMaxDims) throw ConfigError("DomainSpec: dims must be 1, 2, or 3");
    for (int a = 0; a < dims; ++a) {
      if (extent[a] < 1 || partitions[a] < 1)
        throw ConfigError("DomainSpec: extent and partitions must be positive");
      if (extent[a] % partitions[a] != 0)
        throw ConfigError("DomainSpec: extent " + std::to_string(extent[a]) +
                          " not divisible by " + std::to_string(partitions[a]) + " partitions");
    }
    validate_ghost_width(default_ghost_width);
    for (const auto& [name, gw] : ghost_width_overrides) validate_ghost_width(gw);
  }

  void validate_ghost_width(int64_t gw) const {
    if (gw < 0) throw ConfigError("DomainSpec: ghost width must be >= 0");
    for (int a = 0; a < dims; ++a) {
      // A partition side of exactly 2*gw would leave an empty central region.
      if (partitions[a] > 1 && partition_side(a) <= 2 * gw)
        throw ConfigError("DomainSpec: ghost width " + std::to_string(gw) +
                          " too large for partition side " + std::to_string(partition_side(a)));
      if (partitions[a] == 1 && extent[a] <= 2 * gw && gw > 0)
        throw ConfigError("DomainSpec: ghost width too large for extent");
    }
  }
};

/// One partition's region decomposition. `owned` tiles the partition box;
/// `touched` adds the neighbors' ghost strips this partition reads.
struct PartitionDecomposition {
  std::array<int64_t, 3> index{0, 0, 0};
  std::vector<Region> owned;    // canonical order
  std::vector<Region> touched;  // canonical order, superset of owned
};

inline PartitionDecomposition decompose_partition(const DomainSpec& domain,
                                                  std::array<int64_t, 3> index,
                                                  int64_t ghost_width) {
  for (int a = 0; a < domain.dims; ++a)
    if (index[a] < 0 || index[a] >= domain.partitions[a])
      throw ConfigError("decompose_partition: partition index out of range");

  std::array<std::vector<AxisStrip>, 3> axis_strips;
  for (int a = 0; a < domain.dims; ++a) {
    axis_strips[a] = decompose_axis(domain.partition_side(a), ghost_width, index[a] > 0,
                                    index[a] + 1 < domain.partitions[a]);
    const int64_t origin = index[a] * domain.partition_side(a);
    for (auto& s : axis_strips[a]) {
      s.lo += origin;
      s.hi += origin;
    }
  }
  for (int a = domain.dims; a < kMaxDims; ++a)
    axis_strips[a] = {AxisStrip{0, 1, StripRole::Central}};

  PartitionDecomposition out;
  out.index = index;
  for (const auto& sx : axis_strips[0]) {
    for (const auto& sy : axis_strips[1]) {
      for (const auto& sz : axis_strips[2]) {
        Region r;
        r.dims = domain.dims;
        r.lo = {sx.lo, sy.lo, sz.lo};
        r.hi = {sx.hi, sy.hi, sz.hi};
        out.touched.push_back(r);
        if (strip_owned(sx.role) && strip_owned(sy.role) && strip_owned(sz.role))
          out.owned.push_back(r);
      }
    }
  }
  std::sort(out.owned.begin(), out.owned.end(), region_less);
  std::sort(out.touched.begin(), out.touched.end(), region_less);
  return out;
}

/// All partition indices in lexicographic order.
inline std::vector<std::array<int64_t, 3>> enumerate_partitions(const DomainSpec& domain) {
  std::vector<std::array<int64_t, 3>> out;
  std::array<int64_t, 3> n{1, 1, 1};
  for (int a = 0; a < domain.dims; ++a) n[a] = domain.partitions[a];
  for (int64_t x = 0; x < n[0]; ++x)
    for (int64_t y = 0; y < n[1]; ++y)
      for (int64_t z = 0; z < n[2]; ++z) out.push_back({x, y, z});
  return out;
}

/// The global disjoint tiling for one ghost width: the union over partitions
/// of their owned regions, in canonical order.
inline std::vector<Region> enumerate_domain_regions(const DomainSpec& domain,
                                                    int64_t ghost_width) {
  domain.validate();
  domain.validate_ghost_width(ghost_width);
  std::vector<Region> out;
  for (const auto& index : enumerate_partitions(domain)) {
    auto dec = decompose_partition(domain, index, ghost_width);
    out.insert(out.end(), dec.owned.begin(), dec.owned.end());
  }
  std::sort(out.begin(), out.end(), region_less);
  return out;
}

/// Boustrophedon linearization of the partition lattice: consecutive entries
/// are face-adjacent, so any interval of this order is a connected block.
/// Worker assignments are intervals of this sequence.
inline std::vector<std::array<int64_t, 3>> snake_partition_order(const DomainSpec& domain) {
  std::array<int64_t, 3> n{1, 1, 1};
  for (int a = 0; a < domain.dims; ++a) n[a] = domain.partitions[a];
  std::vector<std::array<int64_t, 3>> out;
  for (int64_t z = 0; z < n[2]; ++z) {
    for (int64_t yy = 0; yy < n[1]; ++yy) {
      const int64_t y = (z % 2 == 0) ? yy : n[1] - 1 - yy;
      const int64_t row = z * n[1] + yy;  // global row count keeps x continuous across planes
      for (int64_t xx = 0; xx < n[0]; ++xx) {
        const int64_t x = (row % 2 == 0) ? xx : n[0] - 1 - xx;
        out.push_back({x, y, z});
      }
    }
  }
  return out;
}

inline int64_t partition_linear_index(const DomainSpec& domain, std::array<int64_t, 3> index) {
  int64_t li = 0;
  for (int a = 0; a < domain.dims; ++a) li = li * domain.partitions[a] + index[a];
  return li;
}

}  // namespace gridrun
