#pragma once

// Small autoregressive policy over the parity answer alphabet.
//
// Features for answer position t are three one-hot blocks: the prompt bits
// (two slots per position, 2L wide), the answer position (2L+1 wide, clamped),
// and the two previous answer tokens (vocab wide each, zero at the start).
// Hidden layer: tanh(W1 x + b1); output logits: W2 h + b2.
//
// The feature vector is sparse (L + 3 active entries), so the hot paths never
// materialize it: the prompt contribution is folded into a per-sequence base
// pre-activation and each step adds three columns of W1.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "adaback/parity_env.hpp"
#include "adaback/rng.hpp"

namespace adaback {

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PolicyDims {
  std::size_t L = 8;
  std::size_t hidden = 128;
  std::size_t vocab = kVocabSize;

  std::size_t positions() const noexcept { return 2 * L + 1; }
  std::size_t x_offset() const noexcept { return 0; }
  std::size_t pos_offset() const noexcept { return 2 * L; }
  std::size_t prev1_offset() const noexcept { return pos_offset() + positions(); }
  std::size_t prev2_offset() const noexcept { return prev1_offset() + vocab; }
  std::size_t input_dim() const noexcept { return prev2_offset() + vocab; }

  std::size_t w1_size() const noexcept { return hidden * input_dim(); }
  std::size_t w2_size() const noexcept { return vocab * hidden; }
  std::size_t total() const noexcept { return w1_size() + hidden + w2_size() + vocab; }

  void validate() const {
    if (L == 0 || hidden == 0 || vocab == 0) throw std::invalid_argument("policy dims must all be >= 1");
    if (vocab < kVocabSize) throw std::invalid_argument("policy vocab must cover the parity alphabet");
  }

  friend bool operator==(const PolicyDims&, const PolicyDims&) = default;
};

/// Flat parameter vector with block views W1 (hidden x input, row-major), b1, W2 (vocab x hidden), b2.
/// Also used as the gradient type.
class PolicyParams {
 public:
  PolicyParams() = default;
  explicit PolicyParams(PolicyDims dims) : dims_(dims), values_(dims.total(), 0.0) { dims_.validate(); }

  const PolicyDims& dims() const noexcept { return dims_; }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  std::span<double> w1() noexcept { return block(0, dims_.w1_size()); }
  std::span<double> b1() noexcept { return block(dims_.w1_size(), dims_.hidden); }
  std::span<double> w2() noexcept { return block(dims_.w1_size() + dims_.hidden, dims_.w2_size()); }
  std::span<double> b2() noexcept { return block(dims_.w1_size() + dims_.hidden + dims_.w2_size(), dims_.vocab); }
  std::span<const double> w1() const noexcept { return cblock(0, dims_.w1_size()); }
  std::span<const double> b1() const noexcept { return cblock(dims_.w1_size(), dims_.hidden); }
  std::span<const double> w2() const noexcept { return cblock(dims_.w1_size() + dims_.hidden, dims_.w2_size()); }
  std::span<const double> b2() const noexcept {
    return cblock(dims_.w1_size() + dims_.hidden + dims_.w2_size(), dims_.vocab);
  }

  void set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

  PolicyParams& operator+=(const PolicyParams& other) {
    if (!(dims_ == other.dims_)) throw std::invalid_argument("parameter shapes differ");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
  }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const PolicyParams& a, const PolicyParams& b) {
    return a.dims_ == b.dims_ && a.values_ == b.values_;
  }

 private:
  std::span<double> block(std::size_t off, std::size_t n) noexcept { return {values_.data() + off, n}; }
  std::span<const double> cblock(std::size_t off, std::size_t n) const noexcept { return {values_.data() + off, n}; }

  PolicyDims dims_{};
  std::vector<double> values_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases. The input
/// layer's fan-in is the number of active one-hot features (L + 3), which is
/// what sets the pre-activation scale; the dense width would shrink it ~2x.
inline PolicyParams init_params(const PolicyDims& dims, std::uint64_t seed) {
  PolicyParams p(dims);
  Rng rng = make_rng(seed, 0x7011c7);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(dims.L + 3));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(dims.hidden));
  for (auto& w : p.w1()) w = uniform_real(rng, -s1, s1);
  for (auto& w : p.w2()) w = uniform_real(rng, -s2, s2);
  return p;
}

// ---------------------------------------------------------------------------
// Context encoding

/// Active feature indices for answer position t given the answer so far.
struct StepFeatures {
  std::size_t pos_col = 0;
  std::optional<std::size_t> prev1_col;
  std::optional<std::size_t> prev2_col;
};

inline StepFeatures step_features(const PolicyDims& d, std::span<const Token> answer_so_far) {
  const std::size_t t = answer_so_far.size();
  StepFeatures f;
  f.pos_col = d.pos_offset() + std::min(t, d.positions() - 1);
  if (t >= 1) f.prev1_col = d.prev1_offset() + static_cast<std::size_t>(answer_so_far[t - 1]);
  if (t >= 2) f.prev2_col = d.prev2_offset() + static_cast<std::size_t>(answer_so_far[t - 2]);
  return f;
}

/// Dense feature vector (reference encoding; the fast paths use sparse columns).
inline std::vector<double> encode_context(const PolicyDims& d, std::span<const std::uint8_t> x_bits,
                                          std::span<const Token> answer_so_far) {
  if (x_bits.size() != d.L) throw std::invalid_argument("encode_context: prompt length != L");
  std::vector<double> x(d.input_dim(), 0.0);
  for (std::size_t i = 0; i < d.L; ++i) x[d.x_offset() + 2 * i + (x_bits[i] & 1u)] = 1.0;
  const auto f = step_features(d, answer_so_far);
  x[f.pos_col] = 1.0;
  if (f.prev1_col) x[*f.prev1_col] = 1.0;
  if (f.prev2_col) x[*f.prev2_col] = 1.0;
  return x;
}

/// logits = W2 tanh(W1 x + b1) + b2 for a dense context vector.
inline std::vector<double> next_token_logits(const PolicyParams& p, std::span<const double> context) {
  const auto& d = p.dims();
  if (context.size() != d.input_dim())
    throw std::invalid_argument("next_token_logits: context dimension " + std::to_string(context.size()) +
                                " != input_dim " + std::to_string(d.input_dim()));
  const auto w1 = p.w1(), b1 = p.b1(), w2 = p.w2(), b2 = p.b2();
  std::vector<double> h(d.hidden);
  for (std::size_t j = 0; j < d.hidden; ++j) {
    double a = b1[j];
    for (std::size_t i = 0; i < d.input_dim(); ++i) a += w1[j * d.input_dim() + i] * context[i];
    h[j] = std::tanh(a);
  }
  std::vector<double> logits(d.vocab);
  for (std::size_t v = 0; v < d.vocab; ++v) {
    double a = b2[v];
    for (std::size_t j = 0; j < d.hidden; ++j) a += w2[v * d.hidden + j] * h[j];
    logits[v] = a;
  }
  for (double l : logits)
    if (!std::isfinite(l)) throw NonFiniteError("next_token_logits: non-finite logit");
  return logits;
}

/// Numerically stable softmax of logits / temperature.
inline void softmax_into(std::span<const double> logits, std::span<double> out, double temperature = 1.0) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l / temperature);
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] / temperature - mx);
    z += out[i];
  }
  for (auto& o : out) o /= z;
}

inline std::vector<double> softmax(std::span<const double> logits, double temperature = 1.0) {
  std::vector<double> out(logits.size());
  softmax_into(logits, out, temperature);
  return out;
}

// ---------------------------------------------------------------------------
// Sparse forward machinery

namespace detail {

/// tanh through one exp; agrees with std::tanh to a few ulp in absolute terms and is
/// markedly cheaper than the libm routine on the hot path.
inline double fast_tanh(double a) noexcept { return 1.0 - 2.0 / (1.0 + std::exp(2.0 * a)); }

/// Dot product with four interleaved partial sums (fixed order, so results are reproducible).
inline double dot(const double* a, const double* b, std::size_t n) noexcept {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

/// b1 + sum of the prompt's W1 columns; shared by every step of a sequence.
inline void prompt_base(const PolicyParams& p, std::span<const std::uint8_t> x_bits, std::span<double> base) {
  const auto& d = p.dims();
  if (x_bits.size() != d.L) throw std::invalid_argument("policy: prompt length != L");
  const auto w1 = p.w1();
  const auto b1 = p.b1();
  const std::size_t in = d.input_dim();
  for (std::size_t j = 0; j < d.hidden; ++j) {
    double a = b1[j];
    const double* row = w1.data() + j * in;
    for (std::size_t i = 0; i < d.L; ++i) a += row[2 * i + (x_bits[i] & 1u)];
    base[j] = a;
  }
}

/// Hidden activations and logits for one step.
inline void step_forward(const PolicyParams& p, std::span<const double> base, const StepFeatures& f,
                         std::span<double> h, std::span<double> logits) {
  const auto& d = p.dims();
  const auto w1 = p.w1();
  const std::size_t in = d.input_dim();
  for (std::size_t j = 0; j < d.hidden; ++j) {
    const double* row = w1.data() + j * in;
    double a = base[j] + row[f.pos_col];
    if (f.prev1_col) a += row[*f.prev1_col];
    if (f.prev2_col) a += row[*f.prev2_col];
    h[j] = fast_tanh(a);
  }
  const auto w2 = p.w2();
  const auto b2 = p.b2();
  for (std::size_t v = 0; v < d.vocab; ++v) {
    const double a = b2[v] + dot(w2.data() + v * d.hidden, h.data(), d.hidden);
    if (!std::isfinite(a))
      throw NonFiniteError("policy forward: non-finite logit at answer position " + std::to_string(f.pos_col));
    logits[v] = a;
  }
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace detail

/// Ancestral sampling after a revealed prefix. Stops after an EOS (which is
/// included in the result) or after max_len generated tokens.
inline TokenSeq sample_sequence(const PolicyParams& p, std::span<const std::uint8_t> x_bits,
                                std::span<const Token> revealed_prefix, std::size_t max_len, double temperature,
                                Rng& rng) {
  if (!(temperature > 0.0)) throw std::invalid_argument("sample_sequence: temperature must be > 0");
  const auto& d = p.dims();
  std::vector<double> base(d.hidden), h(d.hidden), logits(d.vocab), probs(d.vocab);
  detail::prompt_base(p, x_bits, base);
  TokenSeq answer(revealed_prefix.begin(), revealed_prefix.end());
  answer.reserve(revealed_prefix.size() + max_len);
  for (std::size_t n = 0; n < max_len; ++n) {
    detail::step_forward(p, base, step_features(d, answer), h, logits);
    softmax_into(logits, probs, temperature);
    const double u = uniform01(rng);
    double acc = 0.0;
    std::size_t tok = d.vocab - 1;
    for (std::size_t v = 0; v < d.vocab; ++v) {
      acc += probs[v];
      if (u < acc) {
        tok = v;
        break;
      }
    }
    // Vocab entries beyond the parity alphabet are never emitted; they map to EOS.
    const Token t = tok < kVocabSize ? static_cast<Token>(tok) : Token::Eos;
    answer.push_back(t);
    if (t == Token::Eos) break;
  }
  return TokenSeq(answer.begin() + static_cast<std::ptrdiff_t>(revealed_prefix.size()), answer.end());
}

/// Argmax decoding; the temperature -> 0 limit of sample_sequence.
inline TokenSeq greedy_decode(const PolicyParams& p, std::span<const std::uint8_t> x_bits,
                              std::span<const Token> revealed_prefix, std::size_t max_len) {
  const auto& d = p.dims();
  std::vector<double> base(d.hidden), h(d.hidden), logits(d.vocab);
  detail::prompt_base(p, x_bits, base);
  TokenSeq answer(revealed_prefix.begin(), revealed_prefix.end());
  for (std::size_t n = 0; n < max_len; ++n) {
    detail::step_forward(p, base, step_features(d, answer), h, logits);
    const std::size_t tok = detail::argmax(logits);
    const Token t = tok < kVocabSize ? static_cast<Token>(tok) : Token::Eos;
    answer.push_back(t);
    if (t == Token::Eos) break;
  }
  return TokenSeq(answer.begin() + static_cast<std::ptrdiff_t>(revealed_prefix.size()), answer.end());
}

struct SequenceLogProb {
  double total = 0.0;
  std::vector<double> per_token;
};

/// Log-probability of the generated tokens only; the prefix is conditioning.
inline SequenceLogProb sequence_logprob(const PolicyParams& p, std::span<const std::uint8_t> x_bits,
                                        std::span<const Token> revealed_prefix, std::span<const Token> generated) {
  const auto& d = p.dims();
  SequenceLogProb out;
  if (generated.empty()) return out;
  std::vector<double> base(d.hidden), h(d.hidden), logits(d.vocab), probs(d.vocab);
  detail::prompt_base(p, x_bits, base);
  TokenSeq answer(revealed_prefix.begin(), revealed_prefix.end());
  for (Token t : generated) {
    detail::step_forward(p, base, step_features(d, answer), h, logits);
    double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    const double lp = logits[static_cast<std::size_t>(t)] - mx - std::log(z);
    out.per_token.push_back(lp);
    out.total += lp;
    answer.push_back(t);
  }
  return out;
}

/// One term of the objective sum_e weight_e * logprob(generated_e | x_e, prefix_e).
struct WeightedEpisode {
  std::span<const std::uint8_t> x_bits;
  std::span<const Token> prefix;
  std::span<const Token> generated;
  double weight = 0.0;
};

/// Adds the exact gradient of weight * logprob(episode) into `grad`.
inline void accumulate_weighted_logprob_grad(const PolicyParams& p, const WeightedEpisode& e, PolicyParams& grad) {
  if (!std::isfinite(e.weight)) throw NonFiniteError("policy gradient: non-finite episode weight");
  if (e.weight == 0.0 || e.generated.empty()) return;
  const auto& d = p.dims();
  const std::size_t H = d.hidden, V = d.vocab, in = d.input_dim();
  std::vector<double> base(H), h(H), logits(V), probs(V), dlogits(V), dpre(H), dpre_sum(H, 0.0);
  detail::prompt_base(p, e.x_bits, base);
  const auto w2 = p.w2();
  auto gw1 = grad.w1();
  auto gb1 = grad.b1();
  auto gw2 = grad.w2();
  auto gb2 = grad.b2();
  TokenSeq answer(e.prefix.begin(), e.prefix.end());
  answer.reserve(e.prefix.size() + e.generated.size());
  for (Token t : e.generated) {
    const auto f = step_features(d, answer);
    detail::step_forward(p, base, f, h, logits);
    softmax_into(logits, probs);
    // d/dlogits of weight * log softmax(logits)[t]
    for (std::size_t v = 0; v < V; ++v)
      dlogits[v] = e.weight * ((v == static_cast<std::size_t>(t) ? 1.0 : 0.0) - probs[v]);
    for (std::size_t v = 0; v < V; ++v) {
      gb2[v] += dlogits[v];
      double* grow = gw2.data() + v * H;
      for (std::size_t j = 0; j < H; ++j) grow[j] += dlogits[v] * h[j];
    }
    for (std::size_t j = 0; j < H; ++j) {
      double dh = 0.0;
      for (std::size_t v = 0; v < V; ++v) dh += w2[v * H + j] * dlogits[v];
      dpre[j] = dh * (1.0 - h[j] * h[j]);
    }
    for (std::size_t j = 0; j < H; ++j) {
      double* grow = gw1.data() + j * in;
      grow[f.pos_col] += dpre[j];
      if (f.prev1_col) grow[*f.prev1_col] += dpre[j];
      if (f.prev2_col) grow[*f.prev2_col] += dpre[j];
      dpre_sum[j] += dpre[j];
    }
    answer.push_back(t);
  }
  for (std::size_t j = 0; j < H; ++j) {
    gb1[j] += dpre_sum[j];
    double* grow = gw1.data() + j * in;
    for (std::size_t i = 0; i < d.L; ++i) grow[2 * i + (e.x_bits[i] & 1u)] += dpre_sum[j];
  }
}

/// Exact gradient of sum_e weight_e * sequence_logprob(e) with respect to every parameter.
inline PolicyParams grad_weighted_logprob(const PolicyParams& p, std::span<const WeightedEpisode> episodes) {
  PolicyParams grad(p.dims());
  for (const auto& e : episodes) accumulate_weighted_logprob_grad(p, e, grad);
  if (!grad.all_finite()) throw NonFiniteError("policy gradient: non-finite gradient entry");
  return grad;
}

// ---------------------------------------------------------------------------
// Optimizers (ascent on the weighted log-probability objective)

enum class OptimizerKind { Sgd, Adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::Adam;
  std::uint64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m;
  std::vector<double> v;

  static OptimizerState make(OptimizerKind kind, std::size_t n) {
    OptimizerState s;
    s.kind = kind;
    if (kind == OptimizerKind::Adam) {
      s.m.assign(n, 0.0);
      s.v.assign(n, 0.0);
    }
    return s;
  }

  friend bool operator==(const OptimizerState&, const OptimizerState&) = default;
};

/// theta <- theta + lr * direction(g). The update is validated before any parameter is written.
inline void optimizer_step(PolicyParams& params, const PolicyParams& grad, OptimizerState& state, double lr) {
  if (!(params.dims() == grad.dims())) throw std::invalid_argument("optimizer_step: gradient shape mismatch");
  auto theta = params.values();
  const auto g = grad.values();
  std::vector<double> delta(theta.size());
  if (state.kind == OptimizerKind::Sgd) {
    for (std::size_t i = 0; i < theta.size(); ++i) delta[i] = lr * g[i];
  } else {
    if (state.m.size() != theta.size() || state.v.size() != theta.size())
      throw std::invalid_argument("optimizer_step: Adam state shape mismatch");
    const auto t = static_cast<double>(state.step + 1);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    std::vector<double> m(state.m), v(state.v);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      delta[i] = lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
    for (std::size_t i = 0; i < theta.size(); ++i)
      if (!std::isfinite(delta[i])) throw NonFiniteError("optimizer_step: non-finite update at index " + std::to_string(i));
    state.m = std::move(m);
    state.v = std::move(v);
  }
  for (std::size_t i = 0; i < theta.size(); ++i)
    if (!std::isfinite(delta[i])) throw NonFiniteError("optimizer_step: non-finite update at index " + std::to_string(i));
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += delta[i];
  ++state.step;
}

// ---------------------------------------------------------------------------
// Binary checkpoints: little-endian magic, u32 version, u64 dims, f64 blocks.

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Truncated, wrong magic/version, or otherwise unreadable file.
class CorruptCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

/// Well-formed file whose dimensions disagree with what the caller expects.
class DimensionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

namespace detail {

inline constexpr std::array<char, 8> kParamsMagic{'A', 'D', 'B', 'K', 'P', 'O', 'L', '\0'};
inline constexpr std::array<char, 8> kOptimMagic{'A', 'D', 'B', 'K', 'O', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class U>
void put_le(std::ostream& os, U value) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((value >> (8 * i)) & 0xffu));
}

inline void put_f64(std::ostream& os, double v) { put_le(os, std::bit_cast<std::uint64_t>(v)); }

template <class U>
U get_le(std::istream& is, const std::string& what) {
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw CorruptCheckpointError("checkpoint truncated while reading " + what);
    value |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(c)) << (8 * i));
  }
  return value;
}

inline double get_f64(std::istream& is, const std::string& what) {
  return std::bit_cast<double>(get_le<std::uint64_t>(is, what));
}

inline void expect_magic(std::istream& is, const std::array<char, 8>& magic, const std::string& path) {
  std::array<char, 8> got{};
  is.read(got.data(), got.size());
  if (is.gcount() != static_cast<std::streamsize>(got.size()) || got != magic)
    throw CorruptCheckpointError("bad magic in " + path);
  const auto version = get_le<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion)
    throw CorruptCheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
}

inline void expect_eof(std::istream& is, const std::string& path) {
  if (is.peek() != std::char_traits<char>::eof()) throw CorruptCheckpointError("trailing bytes in " + path);
}

}  // namespace detail

inline void save_params(const PolicyParams& p, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(detail::kParamsMagic.data(), detail::kParamsMagic.size());
  detail::put_le<std::uint32_t>(os, detail::kCheckpointVersion);
  const auto& d = p.dims();
  for (std::uint64_t v : {std::uint64_t{d.L}, std::uint64_t{d.hidden}, std::uint64_t{d.vocab},
                          std::uint64_t{d.input_dim()}})
    detail::put_le(os, v);
  for (double v : p.values()) detail::put_f64(os, v);
  if (!os) throw CheckpointError("write failed for " + path.string());
}

/// Loads a checkpoint; when `expected` is given, a dimension disagreement raises DimensionMismatchError.
inline PolicyParams load_params(const std::filesystem::path& path, std::optional<PolicyDims> expected = std::nullopt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  const auto ps = path.string();
  detail::expect_magic(is, detail::kParamsMagic, ps);
  PolicyDims d;
  d.L = detail::get_le<std::uint64_t>(is, "L");
  d.hidden = detail::get_le<std::uint64_t>(is, "hidden");
  d.vocab = detail::get_le<std::uint64_t>(is, "vocab");
  const auto input_dim = detail::get_le<std::uint64_t>(is, "input_dim");
  constexpr std::uint64_t kSane = std::uint64_t{1} << 24;
  if (d.L == 0 || d.hidden == 0 || d.vocab < kVocabSize || d.L > kSane || d.hidden > kSane || d.vocab > kSane ||
      input_dim != d.input_dim())
    throw CorruptCheckpointError("inconsistent dimension header in " + ps);
  if (expected && !(*expected == d))
    throw DimensionMismatchError("checkpoint " + ps + " has L=" + std::to_string(d.L) + " hidden=" +
                                 std::to_string(d.hidden) + " vocab=" + std::to_string(d.vocab) + ", expected L=" +
                                 std::to_string(expected->L) + " hidden=" + std::to_string(expected->hidden) +
                                 " vocab=" + std::to_string(expected->vocab));
  PolicyParams p(d);
  for (auto& v : p.values()) v = detail::get_f64(is, "weights");
  detail::expect_eof(is, ps);
  if (!p.all_finite()) throw CorruptCheckpointError("non-finite weight in " + ps);
  return p;
}

inline void save_optimizer(const OptimizerState& s, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  os.write(detail::kOptimMagic.data(), detail::kOptimMagic.size());
  detail::put_le<std::uint32_t>(os, detail::kCheckpointVersion);
  detail::put_le<std::uint32_t>(os, s.kind == OptimizerKind::Adam ? 1u : 0u);
  detail::put_le<std::uint64_t>(os, s.step);
  detail::put_f64(os, s.beta1);
  detail::put_f64(os, s.beta2);
  detail::put_f64(os, s.eps);
  detail::put_le<std::uint64_t>(os, s.m.size());
  for (double v : s.m) detail::put_f64(os, v);
  for (double v : s.v) detail::put_f64(os, v);
  if (!os) throw CheckpointError("write failed for " + path.string());
}

inline OptimizerState load_optimizer(const std::filesystem::path& path, std::optional<std::size_t> expected_size = {}) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());
  const auto ps = path.string();
  detail::expect_magic(is, detail::kOptimMagic, ps);
  OptimizerState s;
  const auto kind = detail::get_le<std::uint32_t>(is, "kind");
  if (kind > 1) throw CorruptCheckpointError("unknown optimizer kind in " + ps);
  s.kind = kind == 1 ? OptimizerKind::Adam : OptimizerKind::Sgd;
  s.step = detail::get_le<std::uint64_t>(is, "step");
  s.beta1 = detail::get_f64(is, "beta1");
  s.beta2 = detail::get_f64(is, "beta2");
  s.eps = detail::get_f64(is, "eps");
  const auto n = detail::get_le<std::uint64_t>(is, "size");
  if (n > (std::uint64_t{1} << 32)) throw CorruptCheckpointError("implausible optimizer size in " + ps);
  if (expected_size && s.kind == OptimizerKind::Adam && n != *expected_size)
    throw DimensionMismatchError("optimizer state in " + ps + " has " + std::to_string(n) + " entries, expected " +
                                 std::to_string(*expected_size));
  s.m.resize(n);
  s.v.resize(n);
  for (auto& v : s.m) v = detail::get_f64(is, "first moment");
  for (auto& v : s.v) v = detail::get_f64(is, "second moment");
  detail::expect_eof(is, ps);
  return s;
}

}  // namespace adaback
