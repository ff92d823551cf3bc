#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "gridrun/common.hpp"

namespace gridrun {

/// Binary little-endian encoder. Integers are fixed-width or LEB128 varints;
/// id sets use run-length ranges so dense sets cost a few bytes.
class WireWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }

  void u16(uint16_t v) {
    buf_.push_back(uint8_t(v));
    buf_.push_back(uint8_t(v >> 8));
  }

  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(uint8_t(v >> (8 * i)));
  }

  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(uint8_t(v >> (8 * i)));
  }

  void i64(int64_t v) { u64(uint64_t(v)); }

  void varint(uint64_t v) {
    while (v >= 0x80) {
      buf_.push_back(uint8_t(v) | 0x80);
      v >>= 7;
    }
    buf_.push_back(uint8_t(v));
  }

  /// Zigzag-coded signed varint.
  void svarint(int64_t v) { varint((uint64_t(v) << 1) ^ uint64_t(v >> 63)); }

  void f64(double v) { u64(double_bits(v)); }

  void raw(const void* data, size_t n) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    buf_.insert(buf_.end(), p, p + n);
  }

  void blob(const std::vector<uint8_t>& b) {
    varint(b.size());
    raw(b.data(), b.size());
  }

  void str(const std::string& s) {
    varint(s.size());
    raw(s.data(), s.size());
  }

  void doubles(const std::vector<double>& v) {
    varint(v.size());
    for (double d : v) f64(d);
  }

  /// Encodes a sorted, duplicate-free id set as maximal runs:
  /// varint count, then per run a varint gap from the previous run's end and
  /// a varint (length - 1). {1..100} costs three bytes.
  void id_set(const std::vector<uint64_t>& sorted_ids) {
    size_t runs = 0;
    for (size_t i = 0; i < sorted_ids.size(); ++i)
      if (i == 0 || sorted_ids[i] != sorted_ids[i - 1] + 1) ++runs;
    varint(runs);
    uint64_t prev_end = 0;
    size_t i = 0;
    while (i < sorted_ids.size()) {
      size_t j = i;
      while (j + 1 < sorted_ids.size() && sorted_ids[j + 1] == sorted_ids[j] + 1) ++j;
      const uint64_t lo = sorted_ids[i];
      if (lo < prev_end) throw InvariantViolation("id_set input not sorted unique");
      varint(lo - prev_end);
      varint(j - i);
      prev_end = sorted_ids[j] + 1;
      i = j + 1;
    }
  }

  const std::vector<uint8_t>& buffer() const { return buf_; }
  std::vector<uint8_t> take() { return std::move(buf_); }
  size_t size() const { return buf_.size(); }

 private:
  std::vector<uint8_t> buf_;
};

/// Bounds-checked decoder over a byte span. Truncated or malformed input
/// raises ProtocolError, never reads past the end.
class WireReader {
 public:
  WireReader(const uint8_t* data, size_t n) : p_(data), end_(data + n) {}
  explicit WireReader(const std::vector<uint8_t>& b) : WireReader(b.data(), b.size()) {}

  uint8_t u8() {
    need(1);
    return *p_++;
  }

  uint16_t u16() {
    need(2);
    uint16_t v = uint16_t(p_[0]) | uint16_t(p_[1]) << 8;
    p_ += 2;
    return v;
  }

  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(p_[i]) << (8 * i);
    p_ += 4;
    return v;
  }

  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(p_[i]) << (8 * i);
    p_ += 8;
    return v;
  }

  int64_t i64() { return int64_t(u64()); }

  uint64_t varint() {
    uint64_t v = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      need(1);
      const uint8_t b = *p_++;
      v |= uint64_t(b & 0x7f) << shift;
      if (!(b & 0x80)) {
        if (shift == 63 && (b & 0x7e)) throw ProtocolError("varint overflows 64 bits");
        return v;
      }
    }
    throw ProtocolError("varint too long");
  }

  int64_t svarint() {
    const uint64_t z = varint();
    return int64_t(z >> 1) ^ -int64_t(z & 1);
  }

  double f64() { return bits_double(u64()); }

  std::vector<uint8_t> blob() {
    const uint64_t n = varint();
    need(n);
    std::vector<uint8_t> out(p_, p_ + n);
    p_ += n;
    return out;
  }

  std::string str() {
    const uint64_t n = varint();
    need(n);
    std::string out(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return out;
  }

  std::vector<double> doubles() {
    const uint64_t n = varint();
    need(n * 8);
    std::vector<double> out(n);
    for (uint64_t i = 0; i < n; ++i) out[i] = f64();
    return out;
  }

  std::vector<uint64_t> id_set() {
    const uint64_t runs = varint();
    std::vector<uint64_t> out;
    uint64_t cursor = 0;
    for (uint64_t r = 0; r < runs; ++r) {
      const uint64_t gap = varint();
      const uint64_t len = varint() + 1;
      const uint64_t lo = cursor + gap;
      if (lo + len < lo) throw ProtocolError("id_set run overflows");
      for (uint64_t i = 0; i < len; ++i) out.push_back(lo + i);
      cursor = lo + len;
    }
    return out;
  }

  size_t remaining() const { return size_t(end_ - p_); }
  bool done() const { return p_ == end_; }

  void expect_done() const {
    if (!done()) throw ProtocolError("trailing bytes in message");
  }

 private:
  void need(size_t n) const {
    if (size_t(end_ - p_) < n) throw ProtocolError("truncated message");
  }

  const uint8_t* p_;
  const uint8_t* end_;
};

/// Frame layout: 4-byte little-endian length of (tag + body), 2-byte tag,
/// body bytes. An empty-body frame is six bytes on the wire.
inline constexpr size_t kFrameHeaderBytes = 4;
inline constexpr size_t kMaxFrameBytes = 1u << 30;

inline std::vector<uint8_t> frame(uint16_t tag, const std::vector<uint8_t>& body) {
  if (body.size() + 2 > kMaxFrameBytes) throw ProtocolError("frame too large");
  std::vector<uint8_t> out;
  out.reserve(kFrameHeaderBytes + 2 + body.size());
  const uint32_t len = uint32_t(body.size() + 2);
  for (int i = 0; i < 4; ++i) out.push_back(uint8_t(len >> (8 * i)));
  out.push_back(uint8_t(tag));
  out.push_back(uint8_t(tag >> 8));
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

/// Incremental frame splitter for stream transports. Feed bytes, take frames.
class FrameDecoder {
 public:
  void feed(const uint8_t* data, size_t n) { buf_.insert(buf_.end(), data, data + n); }

  /// Returns one complete frame's (tag + body) payload, or empty optional.
  bool next(uint16_t& tag, std::vector<uint8_t>& body) {
    if (buf_.size() - pos_ < kFrameHeaderBytes) {
      compact();
      return false;
    }
    uint32_t len = 0;
    for (int i = 0; i < 4; ++i) len |= uint32_t(buf_[pos_ + i]) << (8 * i);
    if (len < 2 || len > kMaxFrameBytes) throw ProtocolError("bad frame length");
    if (buf_.size() - pos_ < kFrameHeaderBytes + len) {
      compact();
      return false;
    }
    const size_t at = pos_ + kFrameHeaderBytes;
    tag = uint16_t(buf_[at]) | uint16_t(buf_[at + 1]) << 8;
    body.assign(buf_.begin() + at + 2, buf_.begin() + at + len);
    pos_ = at + len;
    return true;
  }

 private:
  void compact() {
    if (pos_ > 0) {
      buf_.erase(buf_.begin(), buf_.begin() + pos_);
      pos_ = 0;
    }
  }

  std::vector<uint8_t> buf_;
  size_t pos_ = 0;
};

}  // namespace gridrun
