#pragma once

// Chain-of-parities environment: given X in {0,1}^L, a valid answer is
// Y1 Z1 ... YL ZL with free Y bits and Z_i = Z_{i-1} ^ Y_i ^ X_i, Z_0 = 0.

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "adaback/rng.hpp"

namespace adaback {

/// Character vocabulary shared by the environment and the policy.
enum class Token : std::uint8_t { Zero = 0, One = 1, Equals = 2, X = 3, A = 4, Space = 5, Eos = 6 };

inline constexpr std::size_t kVocabSize = 7;

using TokenSeq = std::vector<Token>;

constexpr bool is_bit(Token t) noexcept { return t == Token::Zero || t == Token::One; }
constexpr Token bit_token(std::uint8_t b) noexcept { return b ? Token::One : Token::Zero; }
constexpr std::uint8_t token_bit(Token t) noexcept { return t == Token::One ? 1 : 0; }

/// '$' renders EOS; every other token has its literal character.
constexpr char token_char(Token t) noexcept {
  switch (t) {
    case Token::Zero: return '0';
    case Token::One: return '1';
    case Token::Equals: return '=';
    case Token::X: return 'X';
    case Token::A: return 'A';
    case Token::Space: return ' ';
    case Token::Eos: return '$';
  }
  return '?';
}

inline Token char_token(char c) {
  switch (c) {
    case '0': return Token::Zero;
    case '1': return Token::One;
    case '=': return Token::Equals;
    case 'X': return Token::X;
    case 'A': return Token::A;
    case ' ': return Token::Space;
    case '$': return Token::Eos;
    default: throw std::invalid_argument(std::string("character outside vocabulary: '") + c + "'");
  }
}

inline TokenSeq to_tokens(std::string_view s) {
  TokenSeq out;
  out.reserve(s.size());
  for (char c : s) out.push_back(char_token(c));
  return out;
}

inline std::string to_string(std::span<const Token> seq) {
  std::string out;
  out.reserve(seq.size());
  for (Token t : seq) out.push_back(token_char(t));
  return out;
}

struct ParityInstance {
  std::vector<std::uint8_t> x_bits;

  std::size_t length() const noexcept { return x_bits.size(); }

  void validate() const {
    if (x_bits.empty()) throw std::invalid_argument("parity instance must have L >= 1");
    for (auto b : x_bits)
      if (b > 1) throw std::invalid_argument("parity instance bits must be 0 or 1");
  }

  static ParityInstance from_string(std::string_view bits) {
    ParityInstance inst;
    for (char c : bits) {
      if (c != '0' && c != '1') throw std::invalid_argument("x_bits must be an ASCII 0/1 string");
      inst.x_bits.push_back(static_cast<std::uint8_t>(c - '0'));
    }
    inst.validate();
    return inst;
  }

  std::string bits_string() const {
    std::string s;
    for (auto b : x_bits) s.push_back(static_cast<char>('0' + b));
    return s;
  }
};

inline bool operator==(const ParityInstance& a, const ParityInstance& b) { return a.x_bits == b.x_bits; }

/// Parsed answer: format_valid holds iff there are exactly 2L bit characters.
struct ParityCompletion {
  TokenSeq bits;
  bool format_valid = false;

  std::string str() const { return to_string(bits); }
};

struct RewardSpec {
  double full_reward = 1.0;
  double format_reward = 0.1;
  double invalid_reward = 0.0;

  void validate() const {
    if (!(format_reward >= 0.0 && format_reward < full_reward))
      throw std::invalid_argument("format_reward must satisfy 0 <= format_reward < full_reward");
  }
};

/// Prompt surface "X=<bits> A=".
inline TokenSeq render_prompt(const ParityInstance& inst) {
  TokenSeq p{Token::X, Token::Equals};
  for (auto b : inst.x_bits) p.push_back(bit_token(b));
  p.insert(p.end(), {Token::Space, Token::A, Token::Equals});
  return p;
}

inline ParityInstance gen_instance(std::size_t L, Rng& rng) {
  if (L == 0) throw std::invalid_argument("gen_instance: L must be >= 1");
  ParityInstance inst;
  inst.x_bits.resize(L);
  for (auto& b : inst.x_bits) b = static_cast<std::uint8_t>(rng() >> 63);
  return inst;
}

inline ParityCompletion solve_reference(const ParityInstance& inst, std::span<const std::uint8_t> y_bits) {
  if (y_bits.size() != inst.length())
    throw std::invalid_argument("solve_reference: y_bits length must equal L");
  ParityCompletion out;
  out.bits.reserve(2 * inst.length());
  std::uint8_t z = 0;
  for (std::size_t i = 0; i < inst.length(); ++i) {
    const std::uint8_t y = y_bits[i] & 1u;
    z = static_cast<std::uint8_t>(z ^ y ^ inst.x_bits[i]);
    out.bits.push_back(bit_token(y));
    out.bits.push_back(bit_token(z));
  }
  out.format_valid = true;
  return out;
}

/// Reads tokens up to the first EOS and keeps at most 2L of them; anything
/// after the 2L-th answer character is ignored.
inline ParityCompletion parse_completion(const ParityInstance& inst, std::span<const Token> output) {
  const std::size_t want = 2 * inst.length();
  ParityCompletion c;
  for (Token t : output) {
    if (t == Token::Eos || c.bits.size() == want) break;
    c.bits.push_back(t);
  }
  c.format_valid = c.bits.size() == want;
  for (Token t : c.bits) c.format_valid = c.format_valid && is_bit(t);
  return c;
}

/// True iff a format-valid completion satisfies every Z recurrence step.
inline bool satisfies_recurrence(const ParityInstance& inst, const ParityCompletion& c) {
  if (!c.format_valid) return false;
  std::uint8_t z = 0;
  for (std::size_t i = 0; i < inst.length(); ++i) {
    const std::uint8_t y = token_bit(c.bits[2 * i]);
    z = static_cast<std::uint8_t>(z ^ y ^ inst.x_bits[i]);
    if (token_bit(c.bits[2 * i + 1]) != z) return false;
  }
  return true;
}

inline double reward(const ParityInstance& inst, std::span<const Token> output, const RewardSpec& spec = {}) {
  const auto c = parse_completion(inst, output);
  if (!c.format_valid) return spec.invalid_reward;
  return satisfies_recurrence(inst, c) ? spec.full_reward : spec.format_reward;
}

inline double reward(const ParityInstance& inst, std::string_view output, const RewardSpec& spec = {}) {
  TokenSeq toks;
  toks.reserve(output.size());
  for (char c : output) {
    // Characters outside the vocabulary can only come from external text; they fail the format test.
    try {
      toks.push_back(char_token(c));
    } catch (const std::invalid_argument&) {
      toks.push_back(Token::Space);
    }
  }
  return reward(inst, std::span<const Token>(toks), spec);
}

inline constexpr std::size_t kEnumerateMaxL = 16;

/// All 2^L full-reward outputs, as '0'/'1' strings.
inline std::set<std::string> enumerate_valid(const ParityInstance& inst) {
  const std::size_t L = inst.length();
  if (L > kEnumerateMaxL) throw std::invalid_argument("enumerate_valid: L above the 2^L enumeration guardrail");
  std::set<std::string> out;
  std::vector<std::uint8_t> y(L);
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << L); ++mask) {
    for (std::size_t i = 0; i < L; ++i) y[i] = static_cast<std::uint8_t>((mask >> i) & 1u);
    out.insert(solve_reference(inst, y).str());
  }
  return out;
}

struct ParitySample {
  std::size_t id = 0;
  ParityInstance instance;
  ParityCompletion reference;
};

/// n instances with uniformly random Y choices in their references.
inline std::vector<ParitySample> make_dataset(std::size_t n, std::size_t L, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("make_dataset: n must be >= 1");
  Rng rng = make_rng(seed, 0x9a21);
  std::vector<ParitySample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ParitySample s;
    s.id = i;
    s.instance = gen_instance(L, rng);
    std::vector<std::uint8_t> y(L);
    for (auto& b : y) b = static_cast<std::uint8_t>(rng() >> 63);
    s.reference = solve_reference(s.instance, y);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace adaback
