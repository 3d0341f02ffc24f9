#ifndef ATTNBLEND_SASF_HPP
#define ATTNBLEND_SASF_HPP

// Self-attention style fusion: detail-sensitive instance normalisation
// (AdaIN plus high-frequency residual injection along the token axis) and
// key/value substitution.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "attnblend/array.hpp"
#include "attnblend/error.hpp"

namespace attnblend {

/// Normalised, truncated 1-D Gaussian with k = 2m + 1 taps.
class GaussianKernel1D {
 public:
  GaussianKernel1D(double sigma, std::size_t kernel_size) : sigma_(sigma) {
    require(sigma > 0.0 && std::isfinite(sigma), ErrorCode::InvalidArgument, "sigma must be positive");
    require(kernel_size >= 3 && kernel_size % 2 == 1, ErrorCode::InvalidArgument,
            "kernel size must be odd and at least 3");
    const std::size_t m = kernel_size / 2;
    taps_.resize(kernel_size);
    double sum = 0;
    for (std::size_t t = 0; t < kernel_size; ++t) {
      const double x = static_cast<double>(t) - static_cast<double>(m);
      taps_[t] = std::exp(-x * x / (2.0 * sigma * sigma));
      sum += taps_[t];
    }
    for (double& w : taps_) w /= sum;
  }

  double sigma() const noexcept { return sigma_; }
  std::size_t half_width() const noexcept { return taps_.size() / 2; }
  std::size_t size() const noexcept { return taps_.size(); }
  const std::vector<double>& taps() const noexcept { return taps_; }

 private:
  double sigma_;
  std::vector<double> taps_;
};

struct DsinConfig {
  double alpha = 0.5;
  double sigma = 2.5;
  std::size_t kernel_size = 5;
  // Channels whose replaced-branch std falls below this are treated as flat.
  double eps = 1e-5;

  void validate() const {
    require(alpha >= 0.0 && alpha <= 1.0, ErrorCode::InvalidArgument, "alpha must lie in [0, 1]");
    require(eps > 0.0, ErrorCode::InvalidArgument, "eps must be positive");
    static_cast<void>(GaussianKernel1D(sigma, kernel_size));
  }
};

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Per-channel mean and population standard deviation over the token axis.
inline ChannelStats channel_stats(const FeatureMatrix& f) {
  require(f.rows() >= 1 && f.cols() >= 1, ErrorCode::EmptyMatrix, "feature matrix is empty");
  const auto n = static_cast<double>(f.rows());
  ChannelStats st{std::vector<double>(f.cols(), 0.0), std::vector<double>(f.cols(), 0.0)};
  for (std::size_t i = 0; i < f.rows(); ++i)
    for (std::size_t c = 0; c < f.cols(); ++c) st.mean[c] += f(i, c);
  for (double& m : st.mean) m /= n;
  for (std::size_t i = 0; i < f.rows(); ++i)
    for (std::size_t c = 0; c < f.cols(); ++c) {
      const double d = f(i, c) - st.mean[c];
      st.std[c] += d * d;
    }
  for (double& s : st.std) s = std::sqrt(s / n);
  return st;
}

/// Re-standardises each channel of `replaced` to the style channel statistics.
/// A channel with std below eps normalises to 0, i.e. becomes the style mean.
inline FeatureMatrix adain(const FeatureMatrix& replaced, const FeatureMatrix& style, double eps = 1e-5) {
  require(replaced.cols() == style.cols(), ErrorCode::ShapeMismatch,
          "channel counts differ: " + std::to_string(replaced.cols()) + " vs " + std::to_string(style.cols()));
  require(eps > 0.0, ErrorCode::InvalidArgument, "eps must be positive");
  const auto rep = channel_stats(replaced);
  const auto sty = channel_stats(style);
  FeatureMatrix out(replaced.rows(), replaced.cols());
  for (std::size_t i = 0; i < replaced.rows(); ++i)
    for (std::size_t c = 0; c < replaced.cols(); ++c) {
      const double z = rep.std[c] < eps ? 0.0 : (replaced(i, c) - rep.mean[c]) / rep.std[c];
      out(i, c) = z * sty.std[c] + sty.mean[c];
    }
  return out;
}

/// Per-channel convolution along tokens with mirror padding (edge sample not
/// repeated: x[-1] = x[1]).
inline FeatureMatrix lowpass_tokens(const FeatureMatrix& f, const GaussianKernel1D& kernel) {
  const std::size_t n = f.rows();
  require(n >= 1, ErrorCode::EmptyMatrix, "feature matrix has no tokens");
  require(kernel.size() <= 2 * n - 1, ErrorCode::KernelWiderThanSignal,
          "kernel of " + std::to_string(kernel.size()) + " taps is wider than " + std::to_string(n) + " tokens allow");
  const auto m = static_cast<std::ptrdiff_t>(kernel.half_width());
  const auto last = static_cast<std::ptrdiff_t>(n) - 1;
  const auto& taps = kernel.taps();
  FeatureMatrix out(n, f.cols());
  for (std::ptrdiff_t i = 0; i <= last; ++i) {
    auto dst = out.row(static_cast<std::size_t>(i));
    for (std::ptrdiff_t t = -m; t <= m; ++t) {
      std::ptrdiff_t src = i + t;
      if (src < 0) src = -src;
      if (src > last) src = 2 * last - src;
      const double w = taps[static_cast<std::size_t>(t + m)];
      const auto row = f.row(static_cast<std::size_t>(src));
      for (std::size_t c = 0; c < f.cols(); ++c) dst[c] += w * row[c];
    }
  }
  return out;
}

struct FrequencySplit {
  FeatureMatrix low;
  FeatureMatrix high;
};

namespace sasf_detail {

// Moves `low` by at most half an ulp of |f| + |low| onto the power-of-two grid
// q = 2^(e - 52), e = exponent of |f| + |low|. When f lies on that grid too,
// f - low is exact and low + (f - low) reproduces f bit for bit. Values that
// started as float32 always qualify unless |low| exceeds |f| by ~2^28.
inline void exact_split(double f, double& low, double& high) {
  const double mag = std::abs(f) + std::abs(low);
  if (mag > 0.0 && std::isfinite(mag)) {
    const double q = std::ldexp(1.0, std::ilogb(mag) - 52);
    if (std::fmod(f, q) == 0.0) low = std::nearbyint(low / q) * q;
  }
  high = f - low;
}

}  // namespace sasf_detail

/// low = F * K, high = F - low, with low nudged (by under one ulp) so that
/// low + high == F exactly whenever F's mantissa leaves room for it.
inline FrequencySplit split_frequencies(const FeatureMatrix& f, const GaussianKernel1D& kernel) {
  FrequencySplit out{lowpass_tokens(f, kernel), FeatureMatrix(f.rows(), f.cols())};
  for (std::size_t k = 0; k < f.size(); ++k)
    sasf_detail::exact_split(f.values()[k], out.low.values()[k], out.high.values()[k]);
  return out;
}

/// F'' = AdaIN(F_rep, F_style) + α (F_style^HF - F_rep^HF).
inline FeatureMatrix dsin_inject(const FeatureMatrix& replaced, const FeatureMatrix& style, const DsinConfig& cfg) {
  cfg.validate();
  require(replaced.rows() == style.rows() && replaced.cols() == style.cols(), ErrorCode::ShapeMismatch,
          "replaced and style features differ in shape");
  FeatureMatrix out = adain(replaced, style, cfg.eps);
  if (cfg.alpha == 0.0) return out;
  const GaussianKernel1D kernel(cfg.sigma, cfg.kernel_size);
  const auto rep = split_frequencies(replaced, kernel);
  const auto sty = split_frequencies(style, kernel);
  for (std::size_t k = 0; k < out.size(); ++k)
    out.values()[k] += cfg.alpha * (sty.high.values()[k] - rep.high.values()[k]);
  return out;
}

namespace sasf_detail {

inline bool same_leading(const DenseArray& a, const DenseArray& b) {
  return a.ndim() == b.ndim() && std::equal(a.shape.begin(), a.shape.end() - 1, b.shape.begin());
}

}  // namespace sasf_detail

struct KeyValue {
  DenseArray key;
  DenseArray value;
};

/// Replaces the target stream's keys and values with the style ones. The
/// target arrays are only inspected for shape compatibility.
inline KeyValue kv_substitute(const DenseArray& k_target, const DenseArray& v_target, const DenseArray& k_style,
                              const DenseArray& v_style) {
  for (const DenseArray* a : {&k_target, &v_target, &k_style, &v_style})
    require(a->ndim() >= 2, ErrorCode::ShapeMismatch, "key/value arrays must be at least 2-D");
  require(k_target.ndim() == k_style.ndim() && k_target.shape.back() == k_style.shape.back(),
          ErrorCode::ShapeMismatch,
          "key head dimension differs: " + shape_string(k_target.shape) + " vs " + shape_string(k_style.shape));
  require(v_target.ndim() == v_style.ndim() && v_target.shape.back() == v_style.shape.back(),
          ErrorCode::ShapeMismatch,
          "value head dimension differs: " + shape_string(v_target.shape) + " vs " + shape_string(v_style.shape));
  require(sasf_detail::same_leading(k_style, v_style), ErrorCode::ShapeMismatch,
          "style keys and values disagree on token count");
  return {k_style, v_style};
}

/// Query/key/value inputs of one self-attention layer.
struct AttentionStreams {
  DenseArray query;
  DenseArray key;
  DenseArray value;
};

/// Key/value substitution on a full stream bundle; the query is carried over
/// untouched.
inline AttentionStreams substitute_kv(const AttentionStreams& target, const DenseArray& k_style,
                                      const DenseArray& v_style) {
  auto kv = kv_substitute(target.key, target.value, k_style, v_style);
  return {target.query, std::move(kv.key), std::move(kv.value)};
}

}  // namespace attnblend

#endif  // ATTNBLEND_SASF_HPP
