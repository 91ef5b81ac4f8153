#pragma once

// File formats: scheduler snapshots and parity datasets (JSONL), and CSV helpers.

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "adaback/curriculum.hpp"
#include "adaback/parity_env.hpp"

namespace adaback {

using json = nlohmann::ordered_json;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  if (res.ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, res.ptr);
}

inline std::string format_optional(const std::optional<double>& v) { return v ? format_double(*v) : std::string{}; }

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline json parse_json_line(const std::string& line, std::size_t line_no, const std::string& file) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw FormatError(file + ":" + std::to_string(line_no) + ": malformed JSON (" + e.what() + ")");
  }
}

// ---------------------------------------------------------------------------
// Scheduler snapshot

inline json to_json(const CurriculumConfig& c) {
  return json{{"tau", c.tau},
              {"alpha", c.alpha},
              {"zero_inject_prob", c.zero_inject_prob},
              {"initial_min", c.initial_min},
              {"initial_max", c.initial_max}};
}

inline json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

/// Header record (ema_rho_min, ema_rho_max, config echo) followed by one record per sample.
inline std::string scheduler_snapshot(const Scheduler& s) {
  std::ostringstream os;
  json header{{"type", "header"},
              {"ema_rho_min", s.global().ema_rho_min},
              {"ema_rho_max", s.global().ema_rho_max},
              {"n_samples", s.size()},
              {"config", to_json(s.config())}};
  os << header.dump() << '\n';
  for (const auto& st : s.states()) {
    json rec{{"sample_id", st.sample_id},
             {"rho_min", st.rho_min},
             {"rho_max", st.rho_max},
             {"visits", st.visits},
             {"last_rho", opt_json(st.last_rho)},
             {"last_mean_reward", opt_json(st.last_mean_reward)}};
    os << rec.dump() << '\n';
  }
  return os.str();
}

inline void save_scheduler(const Scheduler& s, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << scheduler_snapshot(s);
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

namespace detail {

template <class T>
T require(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(where + ": field '" + key + "' has the wrong type");
  }
}

inline std::optional<double> optional_number(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_number()) throw FormatError(where + ": field '" + key + "' must be a number or null");
  return j.at(key).get<double>();
}

}  // namespace detail

inline CurriculumConfig curriculum_from_json(const json& j, const std::string& where) {
  CurriculumConfig c;
  c.tau = detail::require<double>(j, "tau", where);
  c.alpha = detail::require<double>(j, "alpha", where);
  c.zero_inject_prob = detail::require<double>(j, "zero_inject_prob", where);
  c.initial_min = detail::require<double>(j, "initial_min", where);
  c.initial_max = detail::require<double>(j, "initial_max", where);
  return c;
}

inline Scheduler parse_scheduler_snapshot(const std::vector<std::string>& lines, const std::string& name) {
  if (lines.empty()) throw FormatError(name + ": empty scheduler snapshot");
  const json header = parse_json_line(lines[0], 1, name);
  const std::string where = name + ":1";
  if (header.value("type", std::string{}) != "header") throw FormatError(where + ": first record must be the header");
  const auto n = detail::require<std::size_t>(header, "n_samples", where);
  if (!header.contains("config")) throw FormatError(where + ": missing field 'config'");
  const auto config = curriculum_from_json(header.at("config"), where);
  GlobalPortionStats global{detail::require<double>(header, "ema_rho_min", where),
                            detail::require<double>(header, "ema_rho_max", where)};
  std::vector<SupervisionState> states;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto w = name + ":" + std::to_string(i + 1);
    const json r = parse_json_line(lines[i], i + 1, name);
    SupervisionState s;
    s.sample_id = detail::require<std::size_t>(r, "sample_id", w);
    s.rho_min = detail::require<double>(r, "rho_min", w);
    s.rho_max = detail::require<double>(r, "rho_max", w);
    s.visits = detail::require<std::uint64_t>(r, "visits", w);
    s.last_rho = detail::optional_number(r, "last_rho", w);
    s.last_mean_reward = detail::optional_number(r, "last_mean_reward", w);
    states.push_back(s);
  }
  if (states.size() != n)
    throw FormatError(name + ": header announces " + std::to_string(n) + " samples, found " +
                      std::to_string(states.size()));
  try {
    return Scheduler::restore(config, global, std::move(states));
  } catch (const std::invalid_argument& e) {
    throw FormatError(name + ": " + e.what());
  }
}

inline Scheduler load_scheduler(const std::filesystem::path& path) {
  return parse_scheduler_snapshot(read_lines(path), path.string());
}

// ---------------------------------------------------------------------------
// Parity dataset: {"id", "x_bits", "reference"} per line.

inline std::string parity_dataset_jsonl(const std::vector<ParitySample>& data) {
  std::ostringstream os;
  for (const auto& s : data)
    os << json{{"id", s.id}, {"x_bits", s.instance.bits_string()}, {"reference", s.reference.str()}}.dump() << '\n';
  return os.str();
}

inline void save_parity_dataset(const std::vector<ParitySample>& data, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << parity_dataset_jsonl(data);
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

/// Validates every record: bits are ASCII 0/1, all instances share one L, and
/// each reference is a full-reward answer for its instance.
inline std::vector<ParitySample> load_parity_dataset(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  const auto name = path.string();
  std::vector<ParitySample> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const auto w = name + ":" + std::to_string(i + 1);
    const json r = parse_json_line(lines[i], i + 1, name);
    ParitySample s;
    s.id = detail::require<std::size_t>(r, "id", w);
    try {
      s.instance = ParityInstance::from_string(detail::require<std::string>(r, "x_bits", w));
      const auto ref = detail::require<std::string>(r, "reference", w);
      s.reference = parse_completion(s.instance, to_tokens(ref));
      if (ref.size() != 2 * s.instance.length() || !satisfies_recurrence(s.instance, s.reference))
        throw FormatError("reference is not a valid answer");
    } catch (const std::invalid_argument& e) {
      throw FormatError(w + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(w + ": " + e.what());
    }
    if (!out.empty() && out.front().instance.length() != s.instance.length())
      throw FormatError(w + ": instance length differs from the first record");
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace adaback
