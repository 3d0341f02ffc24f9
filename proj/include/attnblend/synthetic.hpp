#ifndef ATTNBLEND_SYNTHETIC_HPP
#define ATTNBLEND_SYNTHETIC_HPP

// Deterministic synthetic fixtures standing in for tensors captured from a
// diffusion model: softmax attention stacks with a controllable overlap
// between the two branches' object regions, per-head value products,
// style/content features and a score table.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "attnblend/array.hpp"
#include "attnblend/attention_select.hpp"
#include "attnblend/caof.hpp"
#include "attnblend/error.hpp"
#include "attnblend/tensor_io.hpp"

namespace attnblend {

/// Seeded generator with a fixed output sequence on every platform. Only the
/// raw std::mt19937_64 stream is used; the std distributions are
/// implementation-defined and are avoided.
class Rng {
 public:
  static constexpr const char* kName = "mt19937_64/box-muller/v1";

  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }

  double normal() {
    if (spare_) {
      const double v = *spare_;
      spare_.reset();
      return v;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

struct SyntheticSpec {
  std::uint64_t seed = 42;
  std::size_t heads = 10;
  Grid grid{64, 64};
  std::size_t text_tokens = 77;
  std::size_t head_dim = 64;
  // 1 makes the blend branch's attention identical to the replaced branch.
  double overlap = 0.5;
  std::size_t samples = 20;
  // Text-token column carrying each branch's object phrase.
  std::size_t object_token = 2;

  void validate() const {
    require(heads >= 1 && grid.rows >= 1 && grid.cols >= 1 && head_dim >= 1, ErrorCode::InvalidShape,
            "heads, grid and head_dim must be positive");
    require(text_tokens >= 2, ErrorCode::InvalidShape, "need at least two text tokens");
    require(object_token < text_tokens, ErrorCode::InvalidShape, "object token outside the text tokens");
    require(overlap >= 0.0 && overlap <= 1.0, ErrorCode::InvalidArgument, "overlap must lie in [0, 1]");
    require(grid.size() <= (std::size_t{1} << 24) && heads * head_dim <= 65536, ErrorCode::InvalidShape,
            "requested fixture is too large");
  }
};

struct SyntheticFixture {
  DenseArray attn_replaced;  // H×N×M
  DenseArray attn_blend;     // H×N×M
  DenseArray o_replaced;     // N×D
  DenseArray o_blend;        // N×D
  DenseArray f_replaced;     // N×D content features for style fusion
  DenseArray f_style;        // N×D
  DenseArray k_target, v_target, k_style, v_style;  // N×D
  ScoreTable scores;
};

namespace synthetic_detail {

struct Blob {
  double row, col, width, amplitude;
};

inline Blob random_blob(Rng& rng) {
  return {rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), rng.uniform(0.08, 0.2), rng.uniform(4.0, 6.0)};
}

// Logits H×N×M: noise everywhere, a start-token sink on column 0 and a
// Gaussian spatial blob on the object column.
inline std::vector<double> attention_logits(Rng& rng, const SyntheticSpec& s) {
  const std::size_t n = s.grid.size(), m = s.text_tokens;
  std::vector<double> logits(s.heads * n * m);
  const Blob blob = random_blob(rng);
  for (std::size_t h = 0; h < s.heads; ++h) {
    const double head_gain = rng.uniform(0.7, 1.3);
    for (std::size_t i = 0; i < n; ++i) {
      const double y = (static_cast<double>(i / s.grid.cols) + 0.5) / static_cast<double>(s.grid.rows);
      const double x = (static_cast<double>(i % s.grid.cols) + 0.5) / static_cast<double>(s.grid.cols);
      const double d2 = (y - blob.row) * (y - blob.row) + (x - blob.col) * (x - blob.col);
      for (std::size_t t = 0; t < m; ++t) {
        double v = 0.5 * rng.normal();
        if (t == 0) v += 2.0;
        if (t == s.object_token) v += head_gain * blob.amplitude * std::exp(-d2 / (2.0 * blob.width * blob.width));
        logits[(h * n + i) * m + t] = v;
      }
    }
  }
  return logits;
}

inline DenseArray softmax_stack(const std::vector<double>& logits, const SyntheticSpec& s) {
  const std::size_t n = s.grid.size(), m = s.text_tokens;
  DenseArray out({s.heads, n, m}, Dtype::Float32);
  for (std::size_t r = 0; r < s.heads * n; ++r) {
    double mx = logits[r * m];
    for (std::size_t t = 1; t < m; ++t) mx = std::max(mx, logits[r * m + t]);
    double sum = 0;
    for (std::size_t t = 0; t < m; ++t) sum += std::exp(logits[r * m + t] - mx);
    for (std::size_t t = 0; t < m; ++t)
      out.data[r * m + t] = static_cast<float>(std::exp(logits[r * m + t] - mx) / sum);
  }
  return out;
}

// O = Concat_h(A_h V_h) with V_h ~ N(0, 1), M×d_k per head.
inline DenseArray value_products(Rng& rng, const DenseArray& stack, const SyntheticSpec& s) {
  const std::size_t n = s.grid.size(), m = s.text_tokens, dk = s.head_dim;
  std::vector<Matrix> heads;
  heads.reserve(s.heads);
  for (std::size_t h = 0; h < s.heads; ++h) {
    Matrix v(m, dk);
    for (double& x : v.values()) x = rng.normal();
    Matrix out(n, dk);
    for (std::size_t i = 0; i < n; ++i) {
      auto dst = out.row(i);
      for (std::size_t t = 0; t < m; ++t) {
        const double a = stack.data[(h * n + i) * m + t];
        const auto vr = v.row(t);
        for (std::size_t k = 0; k < dk; ++k) dst[k] += a * vr[k];
      }
    }
    heads.push_back(std::move(out));
  }
  auto o = to_array(concat_heads(heads), Dtype::Float32);
  for (double& x : o.data) x = static_cast<float>(x);
  return o;
}

inline DenseArray normal_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
  DenseArray out({rows, cols}, Dtype::Float32);
  for (double& x : out.data) x = static_cast<float>(rng.normal());
  return out;
}

inline double round4(double x) { return std::round(x * 1e4) / 1e4; }

}  // namespace synthetic_detail

struct InjectionFixture {
  FeatureMatrix replaced;
  FeatureMatrix style;
};

/// Content features that vary slowly over the grid and style features made of
/// white noise around a channel offset, both in [0, 1] after the channel mean.
inline InjectionFixture injection_fixture(std::uint64_t seed, Grid grid, std::size_t channels) {
  require(grid.size() >= 2 && channels >= 1, ErrorCode::InvalidShape, "injection fixture needs data");
  Rng rng(seed);
  const std::size_t n = grid.size();
  InjectionFixture fx{FeatureMatrix(n, channels), FeatureMatrix(n, channels)};
  for (std::size_t c = 0; c < channels; ++c) {
    const double fr = 1.0 + static_cast<double>(rng.index(2));
    const double fc = 1.0 + static_cast<double>(rng.index(2));
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double offset = rng.uniform(-0.05, 0.05);
    for (std::size_t i = 0; i < n; ++i) {
      const double y = static_cast<double>(i / grid.cols) / static_cast<double>(grid.rows);
      const double x = static_cast<double>(i % grid.cols) / static_cast<double>(grid.cols);
      fx.replaced(i, c) = 0.5 + 0.2 * std::sin(2.0 * std::numbers::pi * (fr * y + fc * x) + phase);
      fx.style(i, c) = 0.5 + offset + 0.1 * rng.normal();
    }
  }
  return fx;
}

inline SyntheticFixture generate_fixture(const SyntheticSpec& s) {
  using namespace synthetic_detail;
  s.validate();
  Rng rng(s.seed);
  SyntheticFixture fx;

  const auto logits_rep = attention_logits(rng, s);
  const auto logits_ind = attention_logits(rng, s);
  std::vector<double> logits_blend(logits_rep.size());
  for (std::size_t k = 0; k < logits_rep.size(); ++k)
    logits_blend[k] = s.overlap * logits_rep[k] + (1.0 - s.overlap) * logits_ind[k];
  fx.attn_replaced = softmax_stack(logits_rep, s);
  fx.attn_blend = softmax_stack(logits_blend, s);

  fx.o_replaced = value_products(rng, fx.attn_replaced, s);
  fx.o_blend = value_products(rng, fx.attn_blend, s);

  const std::size_t n = s.grid.size(), d = s.heads * s.head_dim;
  const auto inj = injection_fixture(rng.next(), s.grid, d);
  fx.f_replaced = to_array(inj.replaced, Dtype::Float32);
  fx.f_style = to_array(inj.style, Dtype::Float32);
  for (auto* a : {&fx.f_replaced, &fx.f_style})
    for (double& x : a->data) x = static_cast<float>(x);

  fx.k_target = normal_matrix(rng, n, d);
  fx.v_target = normal_matrix(rng, n, d);
  fx.k_style = normal_matrix(rng, n, d);
  fx.v_style = normal_matrix(rng, n, d);

  for (std::size_t k = 0; k < s.samples; ++k) {
    ScoreRecord r;
    r.sample_id = "sample_" + std::to_string(k);
    r.clip_o = round4(rng.uniform(0.10, 0.16));
    r.clip_r = round4(rng.uniform(0.17, 0.24));
    r.clip_b = round4(rng.uniform(0.24, 0.31));
    r.clip_s = round4(rng.uniform(0.17, 0.24));
    r.lpips_o = round4(rng.uniform(0.15, 0.45));
    fx.scores.rows.push_back(std::move(r));
  }
  return fx;
}

}  // namespace attnblend

#endif  // ATTNBLEND_SYNTHETIC_HPP
