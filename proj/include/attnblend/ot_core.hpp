#ifndef ATTNBLEND_OT_CORE_HPP
#define ATTNBLEND_OT_CORE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "attnblend/array.hpp"
#include "attnblend/attention_select.hpp"
#include "attnblend/error.hpp"

namespace attnblend {

struct CostParams {
  double lambda_feature = 0.7;
  double lambda_spatial = 0.3;
  double gamma = 0.1;

  void validate() const {
    require(lambda_feature >= 0.0 && lambda_spatial >= 0.0, ErrorCode::InvalidArgument,
            "cost weights must be nonnegative");
    require(lambda_feature + lambda_spatial > 0.0, ErrorCode::InvalidArgument,
            "at least one cost weight must be positive");
    require(gamma > 0.0 && std::isfinite(gamma), ErrorCode::InvalidArgument, "gamma must be positive");
  }
};

/// |D|×|S| costs; row i is destination d_i, column j is source s_j.
struct CostMatrix {
  Matrix values;
};

struct SinkhornConfig {
  std::size_t max_iterations = 1000;
  double tolerance = 1e-6;
  bool log_domain = true;

  void validate() const {
    require(max_iterations >= 1, ErrorCode::InvalidArgument, "max_iterations must be at least 1");
    require(tolerance > 0.0, ErrorCode::InvalidArgument, "tolerance must be positive");
  }
};

struct TransportPlan {
  Matrix values;
  // L1 deviation of row and column sums from the uniform marginals.
  double marginal_error = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
};

namespace ot_detail {

inline double squared_norm(std::span<const double> v) {
  double s = 0;
  for (double x : v) s += x * x;
  return s;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
  return s;
}

inline double cosine_distance(std::span<const double> a, std::span<const double> b, double norm_a, double norm_b) {
  if (norm_a < 1e-12 || norm_b < 1e-12) return 1.0;
  return std::clamp(1.0 - dot(a, b) / (norm_a * norm_b), 0.0, 2.0);
}

}  // namespace ot_detail

/// Cosine distance in [0, 2]. A (near-)zero vector has distance 1 to anything.
inline double feature_distance(std::span<const double> a, std::span<const double> b) {
  require(a.size() == b.size(), ErrorCode::LengthMismatch, "feature vectors differ in length");
  return ot_detail::cosine_distance(a, b, std::sqrt(ot_detail::squared_norm(a)),
                                    std::sqrt(ot_detail::squared_norm(b)));
}

/// Euclidean distance between cell centres normalised to [0, 1]^2.
inline double spatial_distance(std::size_t i, std::size_t j, Grid grid) {
  require(i < grid.size() && j < grid.size(), ErrorCode::IndexOutOfRange, "spatial index outside grid");
  const auto rows = static_cast<double>(grid.rows);
  const auto cols = static_cast<double>(grid.cols);
  const double ri = (static_cast<double>(i / grid.cols) + 0.5) / rows;
  const double ci = (static_cast<double>(i % grid.cols) + 0.5) / cols;
  const double rj = (static_cast<double>(j / grid.cols) + 0.5) / rows;
  const double cj = (static_cast<double>(j % grid.cols) + 0.5) / cols;
  return std::sqrt((ri - rj) * (ri - rj) + (ci - cj) * (ci - cj));
}

/// C[i][j] = λ_f·cos-dist(O_replaced[d_i], O_blend[s_j]) + λ_s·spatial(d_i, s_j).
inline CostMatrix build_cost_matrix(const FeatureMatrix& o_replaced, const FeatureMatrix& o_blend,
                                    const IndexSets& sets, const CostParams& params) {
  params.validate();
  require(o_replaced.rows() == o_blend.rows() && o_replaced.cols() == o_blend.cols(), ErrorCode::ShapeMismatch,
          "replaced and blend feature matrices differ in shape");
  require(o_replaced.rows() == sets.grid.size(), ErrorCode::ShapeMismatch,
          "feature rows do not match the grid size");
  for (std::size_t d : sets.dest) require(d < o_replaced.rows(), ErrorCode::IndexOutOfRange, "dest index");
  for (std::size_t s : sets.source) require(s < o_blend.rows(), ErrorCode::IndexOutOfRange, "source index");

  std::vector<double> dest_norm(sets.dest.size()), src_norm(sets.source.size());
  for (std::size_t i = 0; i < sets.dest.size(); ++i)
    dest_norm[i] = std::sqrt(ot_detail::squared_norm(o_replaced.row(sets.dest[i])));
  for (std::size_t j = 0; j < sets.source.size(); ++j)
    src_norm[j] = std::sqrt(ot_detail::squared_norm(o_blend.row(sets.source[j])));

  CostMatrix c{Matrix(sets.dest.size(), sets.source.size())};
  for (std::size_t i = 0; i < sets.dest.size(); ++i) {
    const auto fd = o_replaced.row(sets.dest[i]);
    for (std::size_t j = 0; j < sets.source.size(); ++j) {
      double cost = 0.0;
      if (params.lambda_feature > 0.0)
        cost += params.lambda_feature *
                ot_detail::cosine_distance(fd, o_blend.row(sets.source[j]), dest_norm[i], src_norm[j]);
      if (params.lambda_spatial > 0.0)
        cost += params.lambda_spatial * spatial_distance(sets.dest[i], sets.source[j], sets.grid);
      c.values(i, j) = cost;
    }
  }
  return c;
}

namespace ot_detail {

inline double marginal_l1(const Matrix& t, double mu, double nu) {
  double err = 0;
  std::vector<double> col(t.cols(), 0.0);
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double row = 0;
    for (std::size_t j = 0; j < t.cols(); ++j) {
      row += t(i, j);
      col[j] += t(i, j);
    }
    err += std::abs(row - mu);
  }
  for (double c : col) err += std::abs(c - nu);
  return err;
}

// y = K v
inline void mat_vec(const Matrix& k, const std::vector<double>& v, std::vector<double>& y) {
  for (std::size_t i = 0; i < k.rows(); ++i) {
    const double* row = k.row(i).data();
    double s = 0;
    for (std::size_t j = 0; j < k.cols(); ++j) s += row[j] * v[j];
    y[i] = s;
  }
}

// y = K^T u, accumulated row by row in a fixed order
inline void mat_t_vec(const Matrix& k, const std::vector<double>& u, std::vector<double>& y) {
  std::fill(y.begin(), y.end(), 0.0);
  for (std::size_t i = 0; i < k.rows(); ++i) {
    const double* row = k.row(i).data();
    const double ui = u[i];
    for (std::size_t j = 0; j < k.cols(); ++j) y[j] += row[j] * ui;
  }
}

inline bool all_positive_finite(const std::vector<double>& x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v) && v > 0.0; });
}

// Log-domain Sinkhorn with absorption: the dual potentials f, g carry the
// log-scalings (f = γ log u) and the working kernel is
// exp((f_i + g_j - C_ij)/γ), rebuilt whenever the residual scalings u, v
// leave a safe range.
class StabilizedSolver {
 public:
  StabilizedSolver(const Matrix& cost, double gamma)
      : c_(cost), gamma_(gamma), n_(cost.rows()), m_(cost.cols()),
        log_mu_(std::log(1.0 / static_cast<double>(n_))), log_nu_(std::log(1.0 / static_cast<double>(m_))),
        f_(n_, 0.0), g_(m_, 0.0), kernel_(n_, m_) {
    exact_update_f();
    exact_update_g();
    rebuild();
  }

  // exact log-sum-exp updates of the potentials
  void exact_update_f() {
    for (std::size_t i = 0; i < n_; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < m_; ++j) mx = std::max(mx, (g_[j] - c_(i, j)) / gamma_);
      double s = 0;
      for (std::size_t j = 0; j < m_; ++j) s += std::exp((g_[j] - c_(i, j)) / gamma_ - mx);
      f_[i] = gamma_ * (log_mu_ - mx - std::log(s));
    }
  }

  void exact_update_g() {
    for (std::size_t j = 0; j < m_; ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n_; ++i) mx = std::max(mx, (f_[i] - c_(i, j)) / gamma_);
      double s = 0;
      for (std::size_t i = 0; i < n_; ++i) s += std::exp((f_[i] - c_(i, j)) / gamma_ - mx);
      g_[j] = gamma_ * (log_nu_ - mx - std::log(s));
    }
  }

  void rebuild() {
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < m_; ++j) kernel_(i, j) = std::exp((f_[i] + g_[j] - c_(i, j)) / gamma_);
  }

  void absorb(const std::vector<double>& u, const std::vector<double>& v) {
    for (std::size_t i = 0; i < n_; ++i) f_[i] += gamma_ * std::log(u[i]);
    absorb_v(v);
  }

  void absorb_v(const std::vector<double>& v) {
    for (std::size_t j = 0; j < m_; ++j) g_[j] += gamma_ * std::log(v[j]);
  }

  const Matrix& kernel() const noexcept { return kernel_; }

 private:
  const Matrix& c_;
  double gamma_;
  std::size_t n_, m_;
  double log_mu_, log_nu_;
  std::vector<double> f_, g_;
  Matrix kernel_;
};

}  // namespace ot_detail

/// Balanced entropic OT with uniform marginals μ = 1/|D|, ν = 1/|S|, solved by
/// alternating Sinkhorn scaling. Returns T = diag(u) K diag(v).
inline TransportPlan sinkhorn(const CostMatrix& cost, double gamma, const SinkhornConfig& config = {}) {
  config.validate();
  require(gamma > 0.0 && std::isfinite(gamma), ErrorCode::InvalidArgument, "gamma must be positive");
  const Matrix& c = cost.values;
  const std::size_t n = c.rows(), m = c.cols();
  require(n > 0 && m > 0, ErrorCode::EmptyMatrix, "cost matrix is empty");
  for (double x : c.values()) {
    require(std::isfinite(x), ErrorCode::NonFiniteCost, "cost matrix contains NaN or infinity");
    require(x >= 0.0, ErrorCode::InvalidValue, "cost matrix has a negative entry");
  }
  const double mu = 1.0 / static_cast<double>(n);
  const double nu = 1.0 / static_cast<double>(m);

  std::vector<double> u(n, 1.0), v(m, 1.0), kv(n), ktu(m);
  std::optional<ot_detail::StabilizedSolver> stab;
  Matrix direct;
  if (config.log_domain) {
    stab.emplace(c, gamma);
  } else {
    direct = Matrix(n, m);
    for (std::size_t k = 0; k < c.size(); ++k) direct.values()[k] = std::exp(-c.values()[k] / gamma);
  }
  auto kernel = [&]() -> const Matrix& { return stab ? stab->kernel() : direct; };

  // Absorb once a residual scaling drifts more than e^±50 from 1.
  constexpr double kAbsorbLog = 50.0;
  auto needs_absorb = [&] {
    for (double x : u)
      if (std::abs(std::log(x)) > kAbsorbLog) return true;
    for (double x : v)
      if (std::abs(std::log(x)) > kAbsorbLog) return true;
    return false;
  };

  TransportPlan plan;
  ot_detail::mat_vec(kernel(), v, kv);
  for (std::size_t it = 1; it <= config.max_iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) u[i] = mu / kv[i];
    if (!ot_detail::all_positive_finite(u)) {
      if (!stab) fail(ErrorCode::NumericalOverflow, "kernel row underflowed; use the log-domain solver");
      stab->absorb_v(v);
      stab->exact_update_f();
      stab->exact_update_g();
      stab->rebuild();
      std::fill(u.begin(), u.end(), 1.0);
      std::fill(v.begin(), v.end(), 1.0);
    } else {
      ot_detail::mat_t_vec(kernel(), u, ktu);
      for (std::size_t j = 0; j < m; ++j) v[j] = nu / ktu[j];
      if (!ot_detail::all_positive_finite(v)) {
        if (!stab) fail(ErrorCode::NumericalOverflow, "kernel column underflowed; use the log-domain solver");
        stab->exact_update_g();
        stab->rebuild();
        std::fill(u.begin(), u.end(), 1.0);
        std::fill(v.begin(), v.end(), 1.0);
      } else if (stab && needs_absorb()) {
        stab->absorb(u, v);
        stab->rebuild();
        std::fill(u.begin(), u.end(), 1.0);
        std::fill(v.begin(), v.end(), 1.0);
      }
    }
    plan.iterations = it;
    // Columns are exact after the v update; the row residual decides convergence.
    ot_detail::mat_vec(kernel(), v, kv);
    double row_err = 0;
    for (std::size_t i = 0; i < n; ++i) row_err += std::abs(u[i] * kv[i] - mu);
    if (!std::isfinite(row_err)) fail(ErrorCode::NumericalOverflow, "Sinkhorn residual is not finite");
    if (row_err < config.tolerance) {
      plan.converged = true;
      break;
    }
  }

  plan.values = Matrix(n, m);
  const Matrix& k = kernel();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) plan.values(i, j) = u[i] * k(i, j) * v[j];
  for (double x : plan.values.values())
    if (!std::isfinite(x)) fail(ErrorCode::NumericalOverflow, "transport plan is not finite");
  plan.marginal_error = ot_detail::marginal_l1(plan.values, mu, nu);
  return plan;
}

/// Divides every row by its sum so each row is a distribution over sources.
inline Matrix row_normalize(const Matrix& t) {
  Matrix out(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    double s = 0;
    for (double x : t.row(i)) s += x;
    require(s > 0.0 && std::isfinite(s), ErrorCode::ZeroRow, "plan row " + std::to_string(i) + " has no mass");
    for (std::size_t j = 0; j < t.cols(); ++j) out(i, j) = t(i, j) / s;
  }
  return out;
}

inline Matrix row_normalize(const TransportPlan& plan) { return row_normalize(plan.values); }

}  // namespace attnblend

#endif  // ATTNBLEND_OT_CORE_HPP
