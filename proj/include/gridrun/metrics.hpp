#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gridrun/common.hpp"

namespace gridrun {

using json = nlohmann::json;

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Append-only JSON-lines log of scheduler decisions and lifecycle events.
/// One object per line; timestamps are nanoseconds on the controller clock
/// and never go backwards. Exactly one "terminate" record closes the log.
class MetricsLogger {
 public:
  MetricsLogger() = default;

  explicit MetricsLogger(std::string path) : path_(std::move(path)) {
    if (path_.empty()) return;
    const auto parent = std::filesystem::path(path_).parent_path();
    if (!parent.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(parent, ec);
    }
    out_.open(path_, std::ios::trunc);
    if (!out_) throw ConfigError("cannot open metrics path: " + path_);
  }

  void log(SimTime t, const std::string& event, json fields = json::object()) {
    if (closed_) throw InvariantViolation("metrics log already terminated");
    if (t < last_t_) t = last_t_;  // clock is monotone in the log even if sources race
    last_t_ = t;
    fields["t"] = t;
    fields["event"] = event;
    records_.push_back(fields);
    if (out_.is_open()) {
      out_ << fields.dump() << "\n";
      out_.flush();
    }
    if (event == "terminate") closed_ = true;
  }

  const std::vector<json>& records() const { return records_; }
  SimTime last_time() const { return last_t_; }
  bool closed() const { return closed_; }

 private:
  std::string path_;
  std::ofstream out_;
  std::vector<json> records_;
  SimTime last_t_ = 0;
  bool closed_ = false;
};

inline std::vector<json> read_metrics_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open log: " + path);
  std::vector<json> out;
  std::string line;
  size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw ConfigError("log line " + std::to_string(n) + " is not valid JSON");
    out.push_back(std::move(j));
  }
  return out;
}

/// Flattens a metrics log into a time,iteration,event CSV: one row per outer
/// iteration plus rows for the notable events (checkpoints, rewinds,
/// rebalances, stragglers, deaths). The iteration column carries the most
/// recent iteration marker. A log without a terminate record is truncated.
inline std::string summarize_log(const std::vector<json>& records) {
  static const std::set<std::string> kNotable = {
      "iteration", "checkpoint", "checkpoint_failed", "rewind",
      "resume",    "rebalance",  "straggler",         "worker_dead"};
  bool complete = false;
  for (const json& r : records)
    if (r.value("event", std::string()) == "terminate") complete = true;
  if (!complete) throw ConfigError("truncated log: no terminate record");
  std::ostringstream out;
  out << "time_s,iteration,event\n";
  int64_t iteration = -1;
  for (const json& r : records) {
    if (r.contains("iteration") && r["iteration"].is_number())
      iteration = r["iteration"].get<int64_t>();
    const std::string event = r.value("event", std::string("?"));
    if (!kNotable.count(event)) continue;
    const SimTime t = r.value("t", SimTime(0));
    out << std::fixed << std::setprecision(9) << to_seconds(t) << "," << iteration << ","
        << event << "\n";
  }
  return out.str();
}

/// Final state fixture: what a run (or the reference executor) says every
/// object ended as. Entries are (object, version, payload hash).
struct StateFixture {
  std::string app;
  std::vector<std::tuple<ObjectId, uint64_t, uint64_t>> entries;

  uint64_t digest() const {
    uint64_t h = fnv1a64(nullptr, 0);
    for (const auto& [o, v, ph] : entries) {
      const uint64_t row[3] = {o, v, ph};
      h = fnv1a64(row, sizeof(row), h);
    }
    return h;
  }

  json to_json() const {
    json arr = json::array();
    for (const auto& [o, v, ph] : entries) arr.push_back({o, v, hex64(ph)});
    return json{{"app", app}, {"entries", arr}, {"digest", hex64(digest())}};
  }

  static StateFixture from_json(const json& j) {
    StateFixture f;
    f.app = j.value("app", std::string());
    for (const auto& row : j.at("entries"))
      f.entries.emplace_back(row.at(0).get<ObjectId>(), row.at(1).get<uint64_t>(),
                             std::stoull(row.at(2).get<std::string>(), nullptr, 16));
    if (j.contains("digest") && j["digest"].get<std::string>() != hex64(f.digest()))
      throw ConfigError("fixture digest does not match its entries");
    return f;
  }

  static StateFixture load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open fixture: " + path);
    json j = json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("fixture is not valid JSON: " + path);
    return from_json(j);
  }

  void save(const std::string& path) const {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(parent, ec);
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot open fixture for writing: " + path);
    out << to_json().dump(2) << "\n";
  }
};

/// Extracts the final-state fixture embedded in a log's terminate record.
inline StateFixture fixture_from_log(const std::vector<json>& records) {
  for (auto it = records.rbegin(); it != records.rend(); ++it)
    if (it->value("event", std::string()) == "terminate") {
      StateFixture f;
      f.app = it->value("app", std::string());
      for (const auto& row : it->at("final"))
        f.entries.emplace_back(row.at(0).get<ObjectId>(), row.at(1).get<uint64_t>(),
                               std::stoull(row.at(2).get<std::string>(), nullptr, 16));
      return f;
    }
  throw ConfigError("log has no terminate record");
}

/// Compares a run log's final state against a fixture. Returns a human
/// readable report; ok is true only on an exact match.
inline std::pair<bool, std::string> verify_log(const std::vector<json>& records,
                                               const StateFixture& expected) {
  std::ostringstream out;
  bool ok = true;
  StateFixture got;
  try {
    got = fixture_from_log(records);
  } catch (const std::exception& e) {
    return {false, std::string("FAIL: ") + e.what() + "\n"};
  }
  if (got.entries.size() != expected.entries.size()) {
    ok = false;
    out << "FAIL: object count " << got.entries.size() << " != " << expected.entries.size()
        << "\n";
  }
  const size_t n = std::min(got.entries.size(), expected.entries.size());
  for (size_t i = 0; i < n; ++i) {
    if (got.entries[i] == expected.entries[i]) continue;
    ok = false;
    const auto& [eo, ev, eh] = expected.entries[i];
    const auto& [go, gv, gh] = got.entries[i];
    out << "FAIL: object " << eo << " expected v" << ev << "/" << hex64(eh) << " got object "
        << go << " v" << gv << "/" << hex64(gh) << "\n";
  }
  if (ok)
    out << "PASS: " << expected.entries.size() << " objects, digest " << hex64(expected.digest())
        << "\n";
  return {ok, out.str()};
}

}  // namespace gridrun
