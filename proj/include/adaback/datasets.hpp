#pragma once

// Question/answer JSONL records and the Base-7 and Tensor-2 text transforms.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

#include "adaback/io.hpp"
#include "adaback/rng.hpp"

namespace adaback {

struct QARecord {
  std::string id;
  std::string question;
  std::string answer;
  bool numeric_id = false;     // id was a JSON number in the source file
  json extra = json::object();  // unrecognised fields, kept in source order
};

inline bool operator==(const QARecord& a, const QARecord& b) {
  return a.id == b.id && a.question == b.question && a.answer == b.answer && a.numeric_id == b.numeric_id &&
         a.extra == b.extra;
}

inline json to_json(const QARecord& r) {
  json j;
  if (r.numeric_id)
    j["id"] = json::parse(r.id);
  else
    j["id"] = r.id;
  j["question"] = r.question;
  j["answer"] = r.answer;
  for (const auto& [k, v] : r.extra.items()) j[k] = v;
  return j;
}

enum class OnError { FailFast, Skip };

struct LoadResult {
  std::vector<QARecord> records;
  std::vector<std::string> skipped;  // "<file>:<line>: reason" for each skipped line
};

namespace detail {

inline QARecord qa_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": record must be a JSON object");
  QARecord r;
  if (!j.contains("id")) throw FormatError(where + ": missing field 'id'");
  const auto& id = j.at("id");
  if (id.is_string()) {
    r.id = id.get<std::string>();
  } else if (id.is_number_integer()) {
    r.id = id.dump();
    r.numeric_id = true;
  } else {
    throw FormatError(where + ": field 'id' must be a string or integer");
  }
  r.question = require<std::string>(j, "question", where);
  r.answer = require<std::string>(j, "answer", where);
  if (r.question.empty()) throw FormatError(where + ": field 'question' is empty");
  if (r.answer.empty()) throw FormatError(where + ": field 'answer' is empty");
  for (const auto& [k, v] : j.items())
    if (k != "id" && k != "question" && k != "answer") r.extra[k] = v;
  return r;
}

}  // namespace detail

inline LoadResult parse_qa_jsonl(const std::vector<std::string>& lines, const std::string& name,
                                 OnError on_error = OnError::FailFast) {
  LoadResult out;
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t") == std::string::npos) continue;
    const auto where = name + ":" + std::to_string(i + 1);
    try {
      auto rec = detail::qa_from_json(parse_json_line(lines[i], i + 1, name), where);
      if (!ids.insert(rec.id).second) throw FormatError(where + ": duplicate id '" + rec.id + "'");
      out.records.push_back(std::move(rec));
    } catch (const FormatError& e) {
      if (on_error == OnError::FailFast) throw;
      out.skipped.push_back(e.what());
    }
  }
  return out;
}

inline LoadResult load_qa_jsonl(const std::filesystem::path& path, OnError on_error = OnError::FailFast) {
  return parse_qa_jsonl(read_lines(path), path.string(), on_error);
}

inline std::string qa_jsonl(const std::vector<QARecord>& records) {
  std::ostringstream os;
  for (const auto& r : records) os << to_json(r).dump() << '\n';
  return os.str();
}

inline void save_qa_jsonl(const std::vector<QARecord>& records, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << qa_jsonl(records);
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Base-7

/// Converts a string of decimal digits to base-b digits by long division.
/// Leading zeros are carried over unchanged so the conversion is invertible.
inline std::string convert_digits(std::string_view digits, unsigned from, unsigned to) {
  if (digits.empty()) throw std::invalid_argument("convert_digits: empty literal");
  std::size_t lead = 0;
  while (lead + 1 < digits.size() && digits[lead] == '0') ++lead;
  std::vector<unsigned> num;
  for (char c : digits.substr(lead)) {
    const unsigned d = static_cast<unsigned>(c - '0');
    if (c < '0' || c > '9' || d >= from) throw std::invalid_argument("convert_digits: digit out of range");
    num.push_back(d);
  }
  std::string out;
  while (!(num.size() == 1 && num[0] == 0)) {
    std::vector<unsigned> q;
    unsigned rem = 0;
    for (unsigned d : num) {
      const unsigned cur = rem * from + d;
      if (!q.empty() || cur / to != 0) q.push_back(cur / to);
      rem = cur % to;
    }
    out.push_back(static_cast<char>('0' + rem));
    num = q.empty() ? std::vector<unsigned>{0} : std::move(q);
  }
  if (out.empty()) out = "0";
  std::reverse(out.begin(), out.end());
  return std::string(lead, '0') + out;
}

enum class DropReason { Division, Decimal, Percent };

inline std::string to_string(DropReason r) {
  switch (r) {
    case DropReason::Division: return "division";
    case DropReason::Decimal: return "decimal";
    case DropReason::Percent: return "percent";
  }
  return "?";
}

struct Dropped {
  DropReason reason;
};

namespace detail {

constexpr bool is_digit(char c) noexcept { return c >= '0' && c <= '9'; }
constexpr bool is_alpha(char c) noexcept { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out)
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  return out;
}

inline std::optional<DropReason> drop_reason(std::string_view text) {
  const auto low = lower(text);
  if (low.find('/') != std::string::npos || low.find("\xC3\xB7") != std::string::npos ||
      low.find("divide") != std::string::npos || low.find("quotient") != std::string::npos)
    return DropReason::Division;
  for (std::size_t i = 0; i < text.size(); ++i) {
    if (text[i] == '.' && i + 1 < text.size() && is_digit(text[i + 1])) return DropReason::Decimal;
    if (text[i] == '%' && i > 0 && is_digit(text[i - 1])) return DropReason::Percent;
  }
  return std::nullopt;
}

/// Rewrites every maximal digit run that is not adjacent to an ASCII letter or
/// to a decimal point. Reading decimal text, a run of 1-3 digits followed by
/// ",ddd" groups is one number; it is written without separators.
inline std::string convert_literals(std::string_view text, unsigned from, unsigned to) {
  std::string out;
  out.reserve(text.size() + 8);
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_digit(text[i])) {
      out.push_back(text[i++]);
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_digit(text[j])) ++j;
    std::string grouped;
    if (from == 10 && j - i <= 3) {
      auto group_at = [&](std::size_t k) {
        return k + 3 < text.size() && text[k] == ',' && is_digit(text[k + 1]) && is_digit(text[k + 2]) &&
               is_digit(text[k + 3]) && (k + 4 == text.size() || !is_digit(text[k + 4]));
      };
      if (group_at(j)) {
        grouped.assign(text.substr(i, j - i));
        for (; group_at(j); j += 4) grouped.append(text.substr(j + 1, 3));
      }
    }
    const bool letter_before = i > 0 && is_alpha(text[i - 1]);
    const bool letter_after = j < text.size() && is_alpha(text[j]);
    const bool point_before = i > 0 && text[i - 1] == '.';
    const bool point_after = j + 1 < text.size() && text[j] == '.' && is_digit(text[j + 1]);
    const auto literal = text.substr(i, j - i);
    if (letter_before || letter_after || point_before || point_after)
      out.append(literal);
    else
      out += convert_digits(grouped.empty() ? literal : std::string_view(grouped), from, to);
    i = j;
  }
  return out;
}

}  // namespace detail

using Base7Result = std::variant<QARecord, Dropped>;

/// Rewrites decimal integer literals in base 7, or drops records that need
/// division or contain non-integer literals.
inline Base7Result to_base7(const QARecord& rec) {
  if (auto r = detail::drop_reason(rec.question)) return Dropped{*r};
  if (auto r = detail::drop_reason(rec.answer)) return Dropped{*r};
  QARecord out = rec;
  out.question = detail::convert_literals(rec.question, 10, 7);
  out.answer = detail::convert_literals(rec.answer, 10, 7);
  return out;
}

/// Inverse of the literal rewriting in to_base7 on the texts it produces.
inline std::string base7_text_to_decimal(std::string_view text) { return detail::convert_literals(text, 7, 10); }

struct Base7Report {
  std::size_t input = 0;
  std::size_t kept = 0;
  std::map<std::string, std::size_t> dropped;  // reason -> count

  json to_json() const {
    json d = json::object();
    for (auto r : {DropReason::Division, DropReason::Decimal, DropReason::Percent}) {
      const auto it = dropped.find(to_string(r));
      d[to_string(r)] = it == dropped.end() ? 0 : it->second;
    }
    std::size_t total = 0;
    for (const auto& [_, c] : dropped) total += c;
    return json{{"kind", "base7"}, {"input", input}, {"kept", kept}, {"dropped", total}, {"dropped_by_reason", d}};
  }
};

inline std::vector<QARecord> base7_transform(const std::vector<QARecord>& records, Base7Report* report = nullptr) {
  std::vector<QARecord> out;
  Base7Report rep;
  rep.input = records.size();
  for (const auto& r : records) {
    auto res = to_base7(r);
    if (auto* d = std::get_if<Dropped>(&res)) {
      ++rep.dropped[to_string(d->reason)];
    } else {
      out.push_back(std::move(std::get<QARecord>(res)));
    }
  }
  rep.kept = out.size();
  if (report) *report = rep;
  return out;
}

// ---------------------------------------------------------------------------
// Tensor-2

inline constexpr std::string_view kFinalAnswerMarker = "####";
inline constexpr std::string_view kTensor2Separator = "\n\n";

struct SplitAnswer {
  std::string rationale;
  std::string final_answer;  // empty when the answer has no "####" line
};

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// Splits "<rationale>\n#### <answer>" at the last marker.
inline SplitAnswer split_final_answer(std::string_view answer) {
  const auto pos = answer.rfind(kFinalAnswerMarker);
  if (pos == std::string_view::npos) return {trim(answer), {}};
  return {trim(answer.substr(0, pos)), trim(answer.substr(pos + kFinalAnswerMarker.size()))};
}

struct Tensor2Report {
  std::size_t input = 0;
  std::size_t output = 0;
  std::size_t dropped_leftover = 0;

  json to_json() const {
    return json{{"kind", "tensor2"}, {"input", input}, {"output", output}, {"dropped_leftover", dropped_leftover}};
  }
};

/// Shuffles records with the pairing seed and concatenates consecutive pairs.
/// The combined answer ends with "#### a1, a2"; the id is "id1+id2".
inline std::vector<QARecord> tensor2(const std::vector<QARecord>& records, std::uint64_t seed,
                                     Tensor2Report* report = nullptr) {
  if (records.size() < 2) throw std::invalid_argument("tensor2: need at least 2 records");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, 0x7e25);
  shuffle(order, rng);
  std::vector<QARecord> out;
  for (std::size_t i = 0; i + 1 < order.size(); i += 2) {
    const auto& a = records[order[i]];
    const auto& b = records[order[i + 1]];
    const auto sa = split_final_answer(a.answer);
    const auto sb = split_final_answer(b.answer);
    QARecord r;
    r.id = a.id + "+" + b.id;
    r.question = a.question + std::string(kTensor2Separator) + b.question;
    for (const auto* part : {&sa.rationale, &sb.rationale}) {
      if (part->empty()) continue;
      if (!r.answer.empty()) r.answer += kTensor2Separator;
      r.answer += *part;
    }
    if (!r.answer.empty()) r.answer += '\n';
    r.answer += std::string(kFinalAnswerMarker) + " " + sa.final_answer + ", " + sb.final_answer;
    out.push_back(std::move(r));
  }
  if (report) *report = {records.size(), out.size(), records.size() % 2};
  return out;
}

}  // namespace adaback
