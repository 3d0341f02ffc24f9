#ifndef ATTNBLEND_METRICS_HPP
#define ATTNBLEND_METRICS_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <fftw3.h>

#include "attnblend/array.hpp"
#include "attnblend/attention_select.hpp"
#include "attnblend/error.hpp"
#include "attnblend/tensor_io.hpp"

namespace attnblend {

// ---------------------------------------------------------------------------
// Composite edit scores

struct MetricWeights {
  double w_r = 1.0;
  double w_b = 1.0;
  double w_s = 1.0;
  double w_l = 1.0;

  void validate() const {
    for (double w : {w_r, w_b, w_s, w_l})
      require(w >= 0.0 && std::isfinite(w), ErrorCode::InvalidArgument, "metric weights must be nonnegative");
    require(w_r + w_b + w_s + w_l > 0.0, ErrorCode::InvalidArgument, "at least one metric weight must be positive");
  }
};

struct ColumnRange {
  double min = 0.0;
  double max = 1.0;
};

/// Score columns that take part in normalisation. `fidelity` is 1 - lpips_o.
enum class ScoreColumn { ClipO, ClipR, ClipB, ClipS, Fidelity };

inline constexpr std::array<ScoreColumn, 5> kAllScoreColumns = {ScoreColumn::ClipO, ScoreColumn::ClipR,
                                                               ScoreColumn::ClipB, ScoreColumn::ClipS,
                                                               ScoreColumn::Fidelity};

constexpr std::string_view column_name(ScoreColumn c) noexcept {
  switch (c) {
    case ScoreColumn::ClipO: return "clip_o";
    case ScoreColumn::ClipR: return "clip_r";
    case ScoreColumn::ClipB: return "clip_b";
    case ScoreColumn::ClipS: return "clip_s";
    case ScoreColumn::Fidelity: return "fidelity";
  }
  return "";
}

inline std::optional<double> column_value(const ScoreRecord& r, ScoreColumn c) {
  switch (c) {
    case ScoreColumn::ClipO: return r.clip_o;
    case ScoreColumn::ClipR: return r.clip_r;
    case ScoreColumn::ClipB: return r.clip_b;
    case ScoreColumn::ClipS: return r.clip_s;
    case ScoreColumn::Fidelity: return 1.0 - r.lpips_o;
  }
  return std::nullopt;
}

struct NormalizationSpec {
  double epsilon = 0.1;
  // Explicit (s_min, s_max) per column; columns absent here are derived from
  // the table being normalised.
  std::map<ScoreColumn, ColumnRange> ranges;

  void validate() const {
    require(epsilon >= 0.0 && epsilon < 1.0, ErrorCode::InvalidArgument, "epsilon must lie in [0, 1)");
  }
};

struct NormalizedRecord {
  std::string sample_id;
  double clip_o = 0, clip_r = 0, clip_b = 0;
  std::optional<double> clip_s;
  double fidelity = 0;
};

struct NormalizedTable {
  std::vector<NormalizedRecord> rows;
  std::map<ScoreColumn, ColumnRange> ranges;
};

/// ŝ = ε + (1 - ε)(s - s_min)/(s_max - s_min)
inline double normalize_value(double s, ColumnRange range, double epsilon) {
  return epsilon + (1.0 - epsilon) * ((s - range.min) / (range.max - range.min));
}

/// Batch min/max of every column present in the table.
inline std::map<ScoreColumn, ColumnRange> batch_ranges(const std::vector<ScoreRecord>& rows) {
  std::map<ScoreColumn, ColumnRange> out;
  for (ScoreColumn c : kAllScoreColumns) {
    std::optional<ColumnRange> r;
    for (const auto& rec : rows) {
      const auto v = column_value(rec, c);
      if (!v) continue;
      if (!r) {
        r = ColumnRange{*v, *v};
      } else {
        r->min = std::min(r->min, *v);
        r->max = std::max(r->max, *v);
      }
    }
    if (r) out[c] = *r;
  }
  return out;
}

inline NormalizedTable normalize_scores(const ScoreTable& table, const NormalizationSpec& spec) {
  spec.validate();
  NormalizedTable out;
  out.ranges = batch_ranges(table.rows);
  for (const auto& [c, r] : spec.ranges) {
    if (out.ranges.count(c)) out.ranges[c] = r;
  }
  for (const auto& [c, r] : out.ranges) {
    require(r.max > r.min, ErrorCode::DegenerateRange,
            "column " + std::string(column_name(c)) + " has s_max <= s_min; cannot normalise");
  }
  auto norm = [&](ScoreColumn c, double v) {
    const auto& r = out.ranges.at(c);
    require(v >= r.min && v <= r.max, ErrorCode::InvalidValue,
            "column " + std::string(column_name(c)) + " value " + format_real(v) + " outside normalisation range");
    return normalize_value(v, r, spec.epsilon);
  };
  for (const auto& rec : table.rows) {
    NormalizedRecord n;
    n.sample_id = rec.sample_id;
    n.clip_o = norm(ScoreColumn::ClipO, rec.clip_o);
    n.clip_r = norm(ScoreColumn::ClipR, rec.clip_r);
    n.clip_b = norm(ScoreColumn::ClipB, rec.clip_b);
    if (rec.clip_s) n.clip_s = norm(ScoreColumn::ClipS, *rec.clip_s);
    n.fidelity = norm(ScoreColumn::Fidelity, 1.0 - rec.lpips_o);
    out.rows.push_back(std::move(n));
  }
  return out;
}

namespace metrics_detail {

inline void check_unit_interval(double v, const char* what) {
  require(v > 0.0 && v <= 1.0 && std::isfinite(v), ErrorCode::NonPositiveInput,
          std::string(what) + " must lie in (0, 1], got " + format_real(v));
}

}  // namespace metrics_detail

/// Weighted harmonic mean of the normalised replace, blend and fidelity scores.
inline double bom(double clip_r_hat, double clip_b_hat, double fidelity_hat, const MetricWeights& w = {}) {
  w.validate();
  metrics_detail::check_unit_interval(clip_r_hat, "clip_r");
  metrics_detail::check_unit_interval(clip_b_hat, "clip_b");
  metrics_detail::check_unit_interval(fidelity_hat, "fidelity");
  const double num = w.w_r + w.w_b + w.w_l;
  require(num > 0.0, ErrorCode::InvalidArgument, "BOM needs a positive w_R, w_B or w_L");
  return num / (w.w_r / clip_r_hat + w.w_b / clip_b_hat + w.w_l / fidelity_hat);
}

/// BOM extended with the style score. With `paper_numerator` the numerator
/// omits w_L (w_R + w_B + w_S), reproducing the formula as printed.
inline double bosm(double clip_r_hat, double clip_b_hat, double clip_s_hat, double fidelity_hat,
                   const MetricWeights& w = {}, bool paper_numerator = false) {
  w.validate();
  metrics_detail::check_unit_interval(clip_r_hat, "clip_r");
  metrics_detail::check_unit_interval(clip_b_hat, "clip_b");
  metrics_detail::check_unit_interval(clip_s_hat, "clip_s");
  metrics_detail::check_unit_interval(fidelity_hat, "fidelity");
  const double num = paper_numerator ? w.w_r + w.w_b + w.w_s : w.w_r + w.w_b + w.w_s + w.w_l;
  return num / (w.w_r / clip_r_hat + w.w_b / clip_b_hat + w.w_s / clip_s_hat + w.w_l / fidelity_hat);
}

// ---------------------------------------------------------------------------
// Texture metrics

/// Single-channel image with intensities in [0, 1].
class GrayImage {
 public:
  explicit GrayImage(Matrix pixels) : px_(std::move(pixels)) {
    require(px_.rows() >= 1 && px_.cols() >= 1, ErrorCode::EmptyMatrix, "gray image is empty");
    for (double v : px_.values())
      require(std::isfinite(v) && v >= 0.0 && v <= 1.0, ErrorCode::InvalidValue,
              "gray image intensities must lie in [0, 1]");
  }
  explicit GrayImage(const DenseArray& arr) : GrayImage(to_matrix(arr)) {}

  std::size_t rows() const noexcept { return px_.rows(); }
  std::size_t cols() const noexcept { return px_.cols(); }
  double operator()(std::size_t r, std::size_t c) const noexcept { return px_(r, c); }
  const Matrix& pixels() const noexcept { return px_; }

 private:
  Matrix px_;
};

/// Collapses N×D token features to a grid image: channel mean, clamped to [0, 1].
inline GrayImage features_to_gray(const FeatureMatrix& f, Grid grid) {
  require(f.rows() == grid.size() && f.cols() > 0, ErrorCode::ShapeMismatch, "features do not cover the grid");
  Matrix img(grid.rows, grid.cols);
  for (std::size_t i = 0; i < f.rows(); ++i) {
    double s = 0;
    for (double x : f.row(i)) s += x;
    img.values()[i] = std::clamp(s / static_cast<double>(f.cols()), 0.0, 1.0);
  }
  return GrayImage(std::move(img));
}

namespace metrics_detail {

inline std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
  const auto last = static_cast<std::ptrdiff_t>(n) - 1;
  if (i < 0) i = -i;
  if (i > last) i = 2 * last - i;
  return static_cast<std::size_t>(i);
}

// Intensities on the 0..255 scale, shifted by the first pixel. Every metric
// here is invariant to a constant offset, and a flat image becomes exactly 0.
inline Matrix scaled_offset(const GrayImage& img) {
  Matrix out(img.rows(), img.cols());
  const double base = img(0, 0) * 255.0;
  for (std::size_t k = 0; k < out.size(); ++k) out.values()[k] = img.pixels().values()[k] * 255.0 - base;
  return out;
}

struct FftwPlanDeleter {
  void operator()(fftw_plan_s* p) const noexcept { fftw_destroy_plan(p); }
};

struct FftwFree {
  void operator()(void* p) const noexcept { fftw_free(p); }
};

}  // namespace metrics_detail

/// Variance of the 4-neighbour Laplacian response (mirror padding) on 0..255 intensities.
inline double laplacian_variance(const GrayImage& img) {
  require(img.rows() >= 2 && img.cols() >= 2, ErrorCode::TooSmall, "Laplacian variance needs at least 2x2 pixels");
  using metrics_detail::mirror;
  const Matrix px = metrics_detail::scaled_offset(img);
  const std::size_t rows = img.rows(), cols = img.cols();
  std::vector<double> resp(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const auto ri = static_cast<std::ptrdiff_t>(r), ci = static_cast<std::ptrdiff_t>(c);
      resp[r * cols + c] = px(mirror(ri - 1, rows), c) + px(mirror(ri + 1, rows), c) + px(r, mirror(ci - 1, cols)) +
                           px(r, mirror(ci + 1, cols)) - 4.0 * px(r, c);
    }
  double mean = 0;
  for (double v : resp) mean += v;
  mean /= static_cast<double>(resp.size());
  double var = 0;
  for (double v : resp) var += (v - mean) * (v - mean);
  return var / static_cast<double>(resp.size());
}

/// Gray level in 0..255 used by the co-occurrence matrix.
inline int gray_level(double intensity) {
  return static_cast<int>(std::lround(std::clamp(intensity, 0.0, 1.0) * 255.0));
}

/// Haralick contrast of the symmetric co-occurrence matrix over offsets (0,1)
/// and (1,0), 256 gray levels.
inline double glcm_contrast(const GrayImage& img) {
  require(img.rows() * img.cols() >= 2, ErrorCode::TooSmall, "GLCM contrast needs at least two pixels");
  std::vector<std::uint64_t> glcm(256 * 256, 0);
  auto add = [&](int a, int b) {
    ++glcm[static_cast<std::size_t>(a) * 256 + static_cast<std::size_t>(b)];
    ++glcm[static_cast<std::size_t>(b) * 256 + static_cast<std::size_t>(a)];
  };
  for (std::size_t r = 0; r < img.rows(); ++r)
    for (std::size_t c = 0; c < img.cols(); ++c) {
      const int a = gray_level(img(r, c));
      if (c + 1 < img.cols()) add(a, gray_level(img(r, c + 1)));
      if (r + 1 < img.rows()) add(a, gray_level(img(r + 1, c)));
    }
  std::uint64_t total = 0;
  double weighted = 0;
  for (int a = 0; a < 256; ++a)
    for (int b = 0; b < 256; ++b) {
      const auto n = glcm[static_cast<std::size_t>(a) * 256 + static_cast<std::size_t>(b)];
      total += n;
      weighted += static_cast<double>((a - b) * (a - b)) * static_cast<double>(n);
    }
  return weighted / static_cast<double>(total);
}

/// Sum of |DFT| over frequencies whose centred radial distance exceeds
/// `cutoff`, with r = 1 at the Nyquist corner. Intensities on 0..255.
inline double fft_high_frequency_sum(const GrayImage& img, double cutoff = 0.25) {
  require(cutoff >= 0.0 && cutoff <= 1.0, ErrorCode::InvalidArgument, "HFS cutoff must lie in [0, 1]");
  const std::size_t rows = img.rows(), cols = img.cols(), n = rows * cols;
  const Matrix px = metrics_detail::scaled_offset(img);

  std::unique_ptr<fftw_complex, metrics_detail::FftwFree> buf(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n)));
  require(buf != nullptr, ErrorCode::IoFailure, "FFT buffer allocation failed");
  std::unique_ptr<fftw_plan_s, metrics_detail::FftwPlanDeleter> plan(fftw_plan_dft_2d(
      static_cast<int>(rows), static_cast<int>(cols), buf.get(), buf.get(), FFTW_FORWARD, FFTW_ESTIMATE));
  require(plan != nullptr, ErrorCode::IoFailure, "FFT planning failed");
  for (std::size_t k = 0; k < n; ++k) {
    buf.get()[k][0] = px.values()[k];
    buf.get()[k][1] = 0.0;
  }
  fftw_execute(plan.get());

  auto signed_freq = [](std::size_t k, std::size_t len) {
    const auto kk = static_cast<double>(k);
    return k <= len / 2 ? kk : kk - static_cast<double>(len);
  };
  double sum = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double fy = signed_freq(r, rows) / (static_cast<double>(rows) / 2.0);
    for (std::size_t c = 0; c < cols; ++c) {
      const double fx = signed_freq(c, cols) / (static_cast<double>(cols) / 2.0);
      const double radius = std::sqrt((fy * fy + fx * fx) / 2.0);
      if (radius <= cutoff) continue;
      const auto& z = buf.get()[r * cols + c];
      sum += std::hypot(z[0], z[1]);
    }
  }
  return sum;
}

struct TextureScores {
  double lv = 0;
  double gc = 0;
  double hfs = 0;
};

inline TextureScores texture_scores(const GrayImage& img, double hfs_cutoff = 0.25) {
  return {laplacian_variance(img), glcm_contrast(img), fft_high_frequency_sum(img, hfs_cutoff)};
}

}  // namespace attnblend

#endif  // ATTNBLEND_METRICS_HPP
