#ifndef ATTNBLEND_CAOF_HPP
#define ATTNBLEND_CAOF_HPP

// Cross-attention object fusion: moves blend-branch features onto the
// replaced object's high-attention positions under an entropic OT plan.

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "attnblend/array.hpp"
#include "attnblend/attention_select.hpp"
#include "attnblend/error.hpp"
#include "attnblend/ot_core.hpp"

namespace attnblend {

struct BlendConfig {
  double w0 = 0.9;

  void validate() const {
    require(w0 >= 0.0 && w0 <= 1.0, ErrorCode::InvalidArgument, "w0 must lie in [0, 1]");
  }
};

/// Concatenates H per-head N×d_k outputs into one N×(H·d_k) matrix.
inline FeatureMatrix concat_heads(const std::vector<Matrix>& per_head) {
  require(!per_head.empty(), ErrorCode::ShapeMismatch, "no head outputs to concatenate");
  const std::size_t n = per_head.front().rows();
  const std::size_t dk = per_head.front().cols();
  require(dk > 0, ErrorCode::ShapeMismatch, "head dimension is zero");
  for (const auto& h : per_head)
    require(h.rows() == n && h.cols() == dk, ErrorCode::ShapeMismatch, "head outputs differ in shape");
  FeatureMatrix out(n, per_head.size() * dk);
  for (std::size_t h = 0; h < per_head.size(); ++h)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < dk; ++k) out(i, h * dk + k) = per_head[h](i, k);
  return out;
}

/// f'_{d_i} = (1 - w0) f_{d_i} + w0 Σ_j T_norm[i][j] f_{s_j}; rows outside D
/// are copied unchanged.
inline FeatureMatrix blend_features(const FeatureMatrix& o_replaced, const FeatureMatrix& o_blend,
                                    const IndexSets& sets, const Matrix& t_norm, const BlendConfig& cfg) {
  cfg.validate();
  require(o_replaced.rows() == o_blend.rows() && o_replaced.cols() == o_blend.cols(), ErrorCode::ShapeMismatch,
          "replaced and blend feature matrices differ in shape");
  require(t_norm.rows() == sets.dest.size() && t_norm.cols() == sets.source.size(), ErrorCode::ShapeMismatch,
          "blending weights must be |D| x |S|");
  for (std::size_t d : sets.dest) require(d < o_replaced.rows(), ErrorCode::IndexOutOfRange, "dest index");
  for (std::size_t s : sets.source) require(s < o_blend.rows(), ErrorCode::IndexOutOfRange, "source index");
  for (std::size_t i = 0; i < t_norm.rows(); ++i) {
    double s = 0;
    for (double x : t_norm.row(i)) {
      require(x >= 0.0, ErrorCode::NonStochasticRow, "blending weights must be nonnegative");
      s += x;
    }
    require(std::abs(s - 1.0) <= 1e-9, ErrorCode::NonStochasticRow,
            "blending weight row " + std::to_string(i) + " does not sum to 1");
  }

  FeatureMatrix out = o_replaced;
  if (cfg.w0 == 0.0) return out;
  const std::size_t dim = o_replaced.cols();
  std::vector<double> transported(dim);
  for (std::size_t i = 0; i < sets.dest.size(); ++i) {
    std::fill(transported.begin(), transported.end(), 0.0);
    for (std::size_t j = 0; j < sets.source.size(); ++j) {
      const double w = t_norm(i, j);
      const auto src = o_blend.row(sets.source[j]);
      for (std::size_t k = 0; k < dim; ++k) transported[k] += w * src[k];
    }
    const auto orig = o_replaced.row(sets.dest[i]);
    auto dst = out.row(sets.dest[i]);
    for (std::size_t k = 0; k < dim; ++k) dst[k] = (1.0 - cfg.w0) * orig[k] + cfg.w0 * transported[k];
  }
  return out;
}

struct CaofParams {
  TokenSelector selector_replaced;
  TokenSelector selector_blend;
  double tau_source = 60.0;
  double tau_dest = 60.0;
  CostParams cost;
  SinkhornConfig sinkhorn;
  BlendConfig blend;
  // Pass the input through (with a warning) instead of failing on an empty D.
  bool allow_empty = false;
};

struct CaofDiagnostics {
  std::size_t source_count = 0;
  std::size_t dest_count = 0;
  std::size_t overlap_count = 0;
  std::size_t iterations = 0;
  double marginal_error = 0.0;
  bool converged = false;
  bool passed_through = false;
  std::vector<std::string> warnings;
};

struct CaofResult {
  FeatureMatrix output;
  CaofDiagnostics diagnostics;
};

/// Full pipeline: head-average both stacks, threshold into S and D, build the
/// cost, solve the transport plan, row-normalise and blend.
inline CaofResult run_caof(const AttentionStack& stack_replaced, const AttentionStack& stack_blend,
                           const FeatureMatrix& o_replaced, const FeatureMatrix& o_blend, const CaofParams& p) {
  require(stack_replaced.grid() == stack_blend.grid(), ErrorCode::ShapeMismatch,
          "attention stacks have different grids");
  require(o_replaced.rows() == stack_replaced.tokens(), ErrorCode::ShapeMismatch,
          "feature rows (" + std::to_string(o_replaced.rows()) + ") do not match attention tokens (" +
              std::to_string(stack_replaced.tokens()) + ")");
  require(o_replaced.rows() == o_blend.rows() && o_replaced.cols() == o_blend.cols(), ErrorCode::ShapeMismatch,
          "replaced and blend feature matrices differ in shape");
  require(o_replaced.cols() > 0, ErrorCode::ShapeMismatch, "feature dimension is zero");
  p.cost.validate();
  p.sinkhorn.validate();
  p.blend.validate();
  require(p.tau_source >= 0.0 && p.tau_source <= 100.0 && p.tau_dest >= 0.0 && p.tau_dest <= 100.0,
          ErrorCode::InvalidArgument, "percentile thresholds must lie in [0, 100]");

  CaofResult result;
  const auto a_replaced = head_average(stack_replaced, p.selector_replaced);
  const auto a_blend = head_average(stack_blend, p.selector_blend);

  IndexSets sets;
  try {
    sets = build_index_sets(a_blend, a_replaced, p.tau_source, p.tau_dest, stack_replaced.grid());
  } catch (const Error& e) {
    if (e.code() != ErrorCode::EmptySet || !p.allow_empty) throw;
    result.output = o_replaced;
    result.diagnostics.passed_through = true;
    result.diagnostics.warnings.push_back(e.detail() + "; features passed through unchanged");
    return result;
  }

  auto& diag = result.diagnostics;
  diag.source_count = sets.source.size();
  diag.dest_count = sets.dest.size();
  std::size_t a = 0, b = 0;
  while (a < sets.source.size() && b < sets.dest.size()) {
    if (sets.source[a] == sets.dest[b]) {
      ++diag.overlap_count;
      ++a;
      ++b;
    } else if (sets.source[a] < sets.dest[b]) {
      ++a;
    } else {
      ++b;
    }
  }

  if (p.blend.w0 == 0.0) {
    // The plan has no effect on the output; skip the solve.
    result.output = o_replaced;
    return result;
  }

  const auto cost = build_cost_matrix(o_replaced, o_blend, sets, p.cost);
  const auto plan = sinkhorn(cost, p.cost.gamma, p.sinkhorn);
  diag.iterations = plan.iterations;
  diag.marginal_error = plan.marginal_error;
  diag.converged = plan.converged;
  if (!plan.converged)
    diag.warnings.push_back("Sinkhorn stopped after " + std::to_string(plan.iterations) +
                            " iterations with marginal error " + std::to_string(plan.marginal_error));
  result.output = blend_features(o_replaced, o_blend, sets, row_normalize(plan), p.blend);
  return result;
}

}  // namespace attnblend

#endif  // ATTNBLEND_CAOF_HPP
