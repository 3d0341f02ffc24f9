#ifndef ATTNBLEND_ATTENTION_SELECT_HPP
#define ATTNBLEND_ATTENTION_SELECT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "attnblend/array.hpp"
#include "attnblend/error.hpp"

namespace attnblend {

struct Grid {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

/// Square grid for N tokens; fails when N is not a perfect square.
inline Grid square_grid(std::size_t n) {
  auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  require(side * side == n, ErrorCode::InvalidShape,
          std::to_string(n) + " tokens do not form a square grid; pass the grid explicitly");
  return {side, side};
}

/// Per-head cross-attention weights, H×N×M, each [h, i, :] a softmax row.
class AttentionStack {
 public:
  static constexpr double kRowSumTolerance = 1e-4;

  AttentionStack(DenseArray weights, Grid grid) : weights_(std::move(weights)), grid_(grid) {
    require(weights_.ndim() == 3, ErrorCode::InvalidShape,
            "attention stack must be H x N x M, got " + shape_string(weights_.shape));
    require(heads() > 0 && tokens() > 0 && text_tokens() > 0, ErrorCode::InvalidShape,
            "attention stack has an empty axis");
    require(grid_.size() == tokens(), ErrorCode::ShapeMismatch,
            "grid " + std::to_string(grid_.rows) + "x" + std::to_string(grid_.cols) + " does not cover " +
                std::to_string(tokens()) + " tokens");
    for (double v : weights_.data)
      require(std::isfinite(v), ErrorCode::NonFinite, "attention weights contain NaN or infinity");
  }

  std::size_t heads() const noexcept { return weights_.shape[0]; }
  std::size_t tokens() const noexcept { return weights_.shape[1]; }
  std::size_t text_tokens() const noexcept { return weights_.shape[2]; }
  const Grid& grid() const noexcept { return grid_; }

  double operator()(std::size_t h, std::size_t i, std::size_t t) const noexcept {
    return weights_.data[(h * tokens() + i) * text_tokens() + t];
  }

  /// Number of rows whose sum deviates from 1 beyond the tolerance, or whose
  /// entries leave [0, 1].
  std::size_t count_invalid_rows(double tol = kRowSumTolerance) const {
    std::size_t bad = 0;
    const std::size_t m = text_tokens();
    for (std::size_t r = 0; r < heads() * tokens(); ++r) {
      double sum = 0;
      bool in_range = true;
      for (std::size_t t = 0; t < m; ++t) {
        const double v = weights_.data[r * m + t];
        sum += v;
        in_range = in_range && v >= 0.0 && v <= 1.0;
      }
      if (!in_range || std::abs(sum - 1.0) > tol) ++bad;
    }
    return bad;
  }

  const DenseArray& weights() const noexcept { return weights_; }

 private:
  DenseArray weights_;
  Grid grid_;
};

enum class Pooling { Mean, Max };

/// Text-token columns that make up one object phrase.
struct TokenSelector {
  std::vector<std::size_t> indices;
  Pooling pooling = Pooling::Mean;
};

/// Head-averaged attention of the selected phrase at every spatial token.
inline std::vector<double> head_average(const AttentionStack& stack, const TokenSelector& selector) {
  require(!selector.indices.empty(), ErrorCode::InvalidArgument, "token selector is empty");
  for (std::size_t t : selector.indices)
    require(t < stack.text_tokens(), ErrorCode::IndexOutOfRange,
            "token index " + std::to_string(t) + " >= " + std::to_string(stack.text_tokens()));

  const auto h_count = static_cast<double>(stack.heads());
  std::vector<double> out(stack.tokens());
  for (std::size_t i = 0; i < stack.tokens(); ++i) {
    double pooled = 0;
    for (std::size_t k = 0; k < selector.indices.size(); ++k) {
      double sum = 0;
      for (std::size_t h = 0; h < stack.heads(); ++h) sum += stack(h, i, selector.indices[k]);
      const double avg = sum / h_count;
      if (selector.pooling == Pooling::Max) {
        pooled = k == 0 ? avg : std::max(pooled, avg);
      } else {
        pooled += avg;
      }
    }
    if (selector.pooling == Pooling::Mean) pooled /= static_cast<double>(selector.indices.size());
    out[i] = pooled;
  }
  return out;
}

/// Nearest-rank percentile with ceiling: the smallest element x such that at
/// least tau percent of the entries are <= x. tau = 0 yields the minimum.
inline double percentile_value(std::vector<double> v, double tau) {
  require(!v.empty(), ErrorCode::EmptyVector, "percentile of an empty vector");
  require(tau >= 0.0 && tau <= 100.0, ErrorCode::InvalidArgument, "percentile must lie in [0, 100]");
  const auto n = static_cast<double>(v.size());
  const double rank = std::ceil(tau * n / 100.0);
  const auto idx = static_cast<std::size_t>(std::clamp(rank - 1.0, 0.0, n - 1.0));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(idx), v.end());
  return v[idx];
}

/// Source set S (from the blend map) and destination set D (from the
/// replaced map). The sets may overlap.
struct IndexSets {
  std::vector<std::size_t> source;
  std::vector<std::size_t> dest;
  Grid grid;
};

inline std::vector<std::size_t> select_at_or_above(const std::vector<double>& v, double tau) {
  const double cut = percentile_value(v, tau);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] >= cut) out.push_back(i);
  return out;
}

inline IndexSets build_index_sets(const std::vector<double>& a_blend, const std::vector<double>& a_replaced,
                                  double tau_source, double tau_dest, Grid grid) {
  require(a_blend.size() == grid.size() && a_replaced.size() == grid.size(), ErrorCode::LengthMismatch,
          "attention maps must both have " + std::to_string(grid.size()) + " entries");
  IndexSets sets{select_at_or_above(a_blend, tau_source), select_at_or_above(a_replaced, tau_dest), grid};
  require(!sets.source.empty(), ErrorCode::EmptySet, "source set is empty");
  require(!sets.dest.empty(), ErrorCode::EmptySet, "destination set is empty");
  return sets;
}

}  // namespace attnblend

#endif  // ATTNBLEND_ATTENTION_SELECT_HPP
