#ifndef ATTNBLEND_TESTS_ORACLES_HPP
#define ATTNBLEND_TESTS_ORACLES_HPP

// Independent reference implementations used by the unit and acceptance
// tests. They share no code with the library beyond the plain containers and
// are written for clarity rather than speed.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "attnblend/attnblend.hpp"

namespace oracle {

using attnblend::Grid;
using attnblend::Matrix;

// ---------------------------------------------------------------------------
// randomness and files

inline Matrix random_matrix(attnblend::Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(rows, cols);
  for (double& x : m.values()) x = rng.uniform(lo, hi);
  return m;
}

inline std::vector<double> random_vector(attnblend::Rng& rng, std::size_t n, double lo = 0.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::uint64_t counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("attnblend-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

inline std::vector<unsigned char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string sha256_hex(const std::vector<unsigned char>& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

inline std::string sha256_file(const std::filesystem::path& p) { return sha256_hex(slurp(p)); }

inline double rel_diff(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

// ---------------------------------------------------------------------------
// selection

/// Smallest entry x with at least τ% of the entries ≤ x.
inline double percentile_scan(const std::vector<double>& v, double tau) {
  double best = std::numeric_limits<double>::infinity();
  for (double x : v) {
    std::size_t le = 0;
    for (double y : v) le += y <= x;
    if (static_cast<double>(le) * 100.0 >= tau * static_cast<double>(v.size())) best = std::min(best, x);
  }
  return best;
}

inline std::vector<std::size_t> members_scan(const std::vector<double>& v, double tau) {
  const double cut = percentile_scan(v, tau);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!(v[i] < cut)) out.push_back(i);
  return out;
}

// ---------------------------------------------------------------------------
// transport

inline double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  long double dot = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += static_cast<long double>(a[k]) * b[k];
    na += static_cast<long double>(a[k]) * a[k];
    nb += static_cast<long double>(b[k]) * b[k];
  }
  if (std::sqrt(na) < 1e-12L || std::sqrt(nb) < 1e-12L) return 1.0;
  const double d = 1.0 - static_cast<double>(dot / (std::sqrt(na) * std::sqrt(nb)));
  return std::clamp(d, 0.0, 2.0);
}

inline double center_distance(std::size_t i, std::size_t j, Grid g) {
  const double yi = (static_cast<double>(i / g.cols) + 0.5) / static_cast<double>(g.rows);
  const double xi = (static_cast<double>(i % g.cols) + 0.5) / static_cast<double>(g.cols);
  const double yj = (static_cast<double>(j / g.cols) + 0.5) / static_cast<double>(g.rows);
  const double xj = (static_cast<double>(j % g.cols) + 0.5) / static_cast<double>(g.cols);
  return std::hypot(yi - yj, xi - xj);
}

inline std::vector<double> row_of(const Matrix& m, std::size_t i) {
  const auto r = m.row(i);
  return {r.begin(), r.end()};
}

/// Σ T C − γ H(T) with H(T) = −Σ T log T.
inline double entropic_objective(const Matrix& t, const Matrix& c, double gamma) {
  double lin = 0, ent = 0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double x = t.values()[k];
    lin += x * c.values()[k];
    if (x > 0) ent -= x * std::log(x);
  }
  return lin - gamma * ent;
}

inline double objective_scale(const Matrix& t, const Matrix& c, double gamma) {
  double lin = 0, ent = 0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double x = t.values()[k];
    lin += x * c.values()[k];
    if (x > 0) ent -= x * std::log(x);
  }
  return std::abs(lin) + gamma * std::abs(ent);
}

/// Minimum of the entropic objective over 3×3 couplings with both marginals
/// equal to 1/3. The four free entries T00, T01, T10, T11 are scanned on a
/// grid that is repeatedly re-centred and shrunk around the best point.
inline double grid_search_3x3(const Matrix& c, double gamma, Matrix* best_plan = nullptr) {
  constexpr double m = 1.0 / 3.0;
  auto plan = [&](const std::array<double, 4>& p, Matrix& t) {
    t(0, 0) = p[0];
    t(0, 1) = p[1];
    t(0, 2) = m - p[0] - p[1];
    t(1, 0) = p[2];
    t(1, 1) = p[3];
    t(1, 2) = m - p[2] - p[3];
    t(2, 0) = m - p[0] - p[2];
    t(2, 1) = m - p[1] - p[3];
    t(2, 2) = m - t(0, 2) - t(1, 2);
    for (double x : t.values())
      if (x < 0) return false;
    return true;
  };
  Matrix t(3, 3);
  std::array<double, 4> center{m / 3, m / 3, m / 3, m / 3};
  double half = m / 2;
  double best = std::numeric_limits<double>::infinity();
  std::array<double, 4> arg = center;
  constexpr int steps = 16;
  for (int round = 0; round < 40; ++round) {
    for (int a = 0; a <= steps; ++a)
      for (int b = 0; b <= steps; ++b)
        for (int d = 0; d <= steps; ++d)
          for (int e = 0; e <= steps; ++e) {
            const std::array<double, 4> p{center[0] - half + 2 * half * a / steps,
                                          center[1] - half + 2 * half * b / steps,
                                          center[2] - half + 2 * half * d / steps,
                                          center[3] - half + 2 * half * e / steps};
            if (!plan(p, t)) continue;
            const double v = entropic_objective(t, c, gamma);
            if (v < best) {
              best = v;
              arg = p;
            }
          }
    center = arg;
    half *= 0.5;
  }
  if (best_plan) {
    *best_plan = Matrix(3, 3);
    plan(arg, *best_plan);
  }
  return best;
}

/// Permutation minimising Σ_i C[i][π(i)] by enumeration, plus the cost gap to
/// the runner-up.
struct Assignment {
  std::vector<std::size_t> perm;
  double cost = 0;
  double gap = 0;
};

inline Assignment best_assignment(const Matrix& c) {
  std::vector<std::size_t> p(c.rows());
  std::iota(p.begin(), p.end(), 0);
  std::vector<std::pair<double, std::vector<std::size_t>>> all;
  do {
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += c(i, p[i]);
    all.emplace_back(s, p);
  } while (std::next_permutation(p.begin(), p.end()));
  std::sort(all.begin(), all.end());
  Assignment a{all[0].second, all[0].first, all.size() > 1 ? all[1].first - all[0].first : 0.0};
  return a;
}

/// Plain Sinkhorn on exp(-C/γ) in long double, iterated to a tight residual.
inline Matrix sinkhorn_plain(const Matrix& c, double gamma, double tol = 1e-14, int max_iter = 100000) {
  const std::size_t n = c.rows(), m = c.cols();
  std::vector<long double> k(n * m), u(n, 1), v(m, 1);
  for (std::size_t x = 0; x < n * m; ++x) k[x] = std::exp(-static_cast<long double>(c.values()[x]) / gamma);
  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      long double s = 0;
      for (std::size_t j = 0; j < m; ++j) s += k[i * m + j] * v[j];
      u[i] = (1.0L / n) / s;
    }
    for (std::size_t j = 0; j < m; ++j) {
      long double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += k[i * m + j] * u[i];
      v[j] = (1.0L / m) / s;
    }
    long double err = 0;
    for (std::size_t i = 0; i < n; ++i) {
      long double s = 0;
      for (std::size_t j = 0; j < m; ++j) s += u[i] * k[i * m + j] * v[j];
      err += std::abs(s - 1.0L / n);
    }
    if (err < tol) break;
  }
  Matrix t(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) t(i, j) = static_cast<double>(u[i] * k[i * m + j] * v[j]);
  return t;
}

/// Composition of the scalar oracles above: head average, percentile sets,
/// cost, plain Sinkhorn, row normalisation, convex blend.
inline Matrix caof_pipeline(const attnblend::DenseArray& attn_rep, const attnblend::DenseArray& attn_blend,
                            const Matrix& o_rep, const Matrix& o_blend, std::size_t token_rep,
                            std::size_t token_blend, Grid grid, double tau, double lf, double ls, double gamma,
                            double w0) {
  const std::size_t h = attn_rep.shape[0], n = attn_rep.shape[1], m = attn_rep.shape[2];
  auto avg = [&](const attnblend::DenseArray& a, std::size_t t) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      long double s = 0;
      for (std::size_t k = 0; k < h; ++k) s += a.data[(k * n + i) * m + t];
      out[i] = static_cast<double>(s / h);
    }
    return out;
  };
  const auto src = members_scan(avg(attn_blend, token_blend), tau);
  const auto dst = members_scan(avg(attn_rep, token_rep), tau);
  Matrix c(dst.size(), src.size());
  for (std::size_t i = 0; i < dst.size(); ++i)
    for (std::size_t j = 0; j < src.size(); ++j)
      c(i, j) = lf * cosine_distance(row_of(o_rep, dst[i]), row_of(o_blend, src[j])) +
                ls * center_distance(dst[i], src[j], grid);
  const Matrix t = sinkhorn_plain(c, gamma);
  Matrix out = o_rep;
  for (std::size_t i = 0; i < dst.size(); ++i) {
    long double rs = 0;
    for (std::size_t j = 0; j < src.size(); ++j) rs += t(i, j);
    for (std::size_t k = 0; k < o_rep.cols(); ++k) {
      long double acc = 0;
      for (std::size_t j = 0; j < src.size(); ++j) acc += (t(i, j) / rs) * o_blend(src[j], k);
      out(dst[i], k) = static_cast<double>((1 - w0) * o_rep(dst[i], k) + w0 * acc);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// sasf

inline std::vector<double> gaussian_taps(double sigma, std::size_t k) {
  std::vector<double> w(k);
  const double m = static_cast<double>(k / 2);
  double s = 0;
  for (std::size_t t = 0; t < k; ++t) {
    w[t] = std::exp(-(t - m) * (t - m) / (2 * sigma * sigma));
    s += w[t];
  }
  for (double& x : w) x /= s;
  return w;
}

/// Sliding window over an explicitly mirrored copy of each column.
inline Matrix convolve_tokens(const Matrix& f, double sigma, std::size_t k) {
  const auto w = gaussian_taps(sigma, k);
  const std::size_t m = k / 2, n = f.rows();
  Matrix out(n, f.cols());
  for (std::size_t c = 0; c < f.cols(); ++c) {
    std::vector<double> padded;
    for (std::size_t t = m; t >= 1; --t) padded.push_back(f(t, c));
    for (std::size_t i = 0; i < n; ++i) padded.push_back(f(i, c));
    for (std::size_t t = 1; t <= m; ++t) padded.push_back(f(n - 1 - t, c));
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t t = 0; t < k; ++t) s += w[t] * padded[i + t];
      out(i, c) = s;
    }
  }
  return out;
}

struct Moments {
  std::vector<double> mean, std;
};

inline Moments two_pass_moments(const Matrix& f) {
  Moments mo{std::vector<double>(f.cols()), std::vector<double>(f.cols())};
  for (std::size_t c = 0; c < f.cols(); ++c) {
    long double s = 0;
    for (std::size_t i = 0; i < f.rows(); ++i) s += f(i, c);
    const long double mean = s / f.rows();
    long double ss = 0;
    for (std::size_t i = 0; i < f.rows(); ++i) ss += (f(i, c) - mean) * (f(i, c) - mean);
    mo.mean[c] = static_cast<double>(mean);
    mo.std[c] = static_cast<double>(std::sqrt(ss / f.rows()));
  }
  return mo;
}

inline double frobenius(const Matrix& m) {
  long double s = 0;
  for (double x : m.values()) s += static_cast<long double>(x) * x;
  return static_cast<double>(std::sqrt(s));
}

// ---------------------------------------------------------------------------
// metrics

inline double harmonic(const std::vector<double>& w, const std::vector<double>& x, double numerator) {
  double den = 0;
  for (std::size_t k = 0; k < x.size(); ++k) den += w[k] * (1.0 / x[k]);
  return numerator / den;
}

/// Pixels scaled to 0..255; LV on the 4-neighbour Laplacian with mirrored
/// borders, population variance.
inline double laplacian_variance(const Matrix& img) {
  const long rows = static_cast<long>(img.rows()), cols = static_cast<long>(img.cols());
  auto at = [&](long r, long c) {
    r = r < 0 ? -r : (r >= rows ? 2 * (rows - 1) - r : r);
    c = c < 0 ? -c : (c >= cols ? 2 * (cols - 1) - c : c);
    if (rows == 1) r = 0;
    if (cols == 1) c = 0;
    return (img(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) - img(0, 0)) * 255.0;
  };
  std::vector<long double> resp;
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c)
      resp.push_back(static_cast<long double>(at(r - 1, c)) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) -
                     4.0L * at(r, c));
  long double mean = 0;
  for (auto x : resp) mean += x;
  mean /= resp.size();
  long double var = 0;
  for (auto x : resp) var += (x - mean) * (x - mean);
  return static_cast<double>(var / resp.size());
}

inline int level(double p) { return static_cast<int>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0)); }

/// Contrast of the symmetric GLCM over offsets (0,1) and (1,0): every
/// unordered neighbour pair enumerated explicitly, normalised by the count.
inline double glcm_contrast(const Matrix& img) {
  long double num = 0;
  long double count = 0;
  for (std::size_t r1 = 0; r1 < img.rows(); ++r1)
    for (std::size_t c1 = 0; c1 < img.cols(); ++c1)
      for (std::size_t r2 = 0; r2 < img.rows(); ++r2)
        for (std::size_t c2 = 0; c2 < img.cols(); ++c2) {
          const bool right = r2 == r1 && c2 == c1 + 1;
          const bool down = c2 == c1 && r2 == r1 + 1;
          if (!right && !down) continue;
          const long double d = level(img(r1, c1)) - level(img(r2, c2));
          num += 2 * d * d;
          count += 2;
        }
  return count > 0 ? static_cast<double>(num / count) : 0.0;
}

/// Direct O(n^4) DFT of the offset 0..255 image; sums |X| over bins whose
/// centred radius, normalised to 1 at the Nyquist corner, exceeds `cutoff`.
inline double hfs_dft(const Matrix& img, double cutoff = 0.25) {
  const std::size_t rows = img.rows(), cols = img.cols();
  long double total = 0;
  for (std::size_t u = 0; u < rows; ++u)
    for (std::size_t v = 0; v < cols; ++v) {
      auto signed_freq = [](std::size_t k, std::size_t n) {
        const double s = k <= (n - 1) / 2 ? static_cast<double>(k) : static_cast<double>(k) - static_cast<double>(n);
        return n > 1 ? s / (static_cast<double>(n) / 2.0) : 0.0;
      };
      const double fy = signed_freq(u, rows), fx = signed_freq(v, cols);
      const double radius = std::sqrt((fy * fy + fx * fx) / 2.0);
      if (!(radius > cutoff)) continue;
      std::complex<long double> acc = 0;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          const long double ang = -2.0L * std::numbers::pi_v<long double> *
                                  (static_cast<long double>(u * r) / rows + static_cast<long double>(v * c) / cols);
          const long double p = (img(r, c) - img(0, 0)) * 255.0L;
          acc += std::polar(p, ang);
        }
      total += std::abs(acc);
    }
  return static_cast<double>(total);
}

}  // namespace oracle

#endif  // ATTNBLEND_TESTS_ORACLES_HPP
