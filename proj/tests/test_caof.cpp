#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace attnblend;

namespace {

Matrix stochastic_rows(Rng& rng, std::size_t n, std::size_t m) {
  return row_normalize(oracle::random_matrix(rng, n, m, 0.01, 1.0));
}

struct Toy {
  SyntheticFixture fx;
  Grid grid;
};

Toy small_fixture(std::uint64_t seed, double overlap = 0.5) {
  SyntheticSpec s;
  s.seed = seed;
  s.heads = 3;
  s.grid = {8, 8};
  s.text_tokens = 6;
  s.head_dim = 4;
  s.overlap = overlap;
  s.samples = 2;
  return {generate_fixture(s), s.grid};
}

CaofParams default_params() {
  CaofParams p;
  p.selector_replaced = {{2}};
  p.selector_blend = {{2}};
  return p;
}

}  // namespace

TEST(ConcatHeads, Identity) {
  Rng rng(1);
  const auto h = oracle::random_matrix(rng, 3, 4);
  EXPECT_EQ(concat_heads({h}).values(), h.values());
}

TEST(ConcatHeads, ColumnPlacement) {
  const Matrix a(2, 1, std::vector<double>{1, 2}), b(2, 1, std::vector<double>{3, 4});
  EXPECT_EQ(concat_heads({a, b}).values(), (std::vector<double>{1, 3, 2, 4}));
}

TEST(ConcatHeads, SdxlWidth) {
  const std::vector<Matrix> heads(10, Matrix(4, 64));
  const auto o = concat_heads(heads);
  EXPECT_EQ(o.cols(), 640u);
  EXPECT_THROW(concat_heads({Matrix(2, 2), Matrix(2, 3)}), Error);
  EXPECT_THROW(concat_heads({}), Error);
}

TEST(BlendFeatures, ZeroStrengthIsBitwiseCopy) {
  Rng rng(2);
  const auto rep = oracle::random_matrix(rng, 6, 3), bl = oracle::random_matrix(rng, 6, 3);
  const IndexSets sets{{0, 1, 5}, {2, 3}, {2, 3}};
  const auto out = blend_features(rep, bl, sets, stochastic_rows(rng, 2, 3), {0.0});
  EXPECT_EQ(out.values(), rep.values());
}

TEST(BlendFeatures, FullStrengthSingleSource) {
  Rng rng(3);
  const auto rep = oracle::random_matrix(rng, 5, 4), bl = oracle::random_matrix(rng, 5, 4);
  const IndexSets sets{{3}, {0, 1, 4}, {1, 5}};
  const auto out = blend_features(rep, bl, sets, Matrix(3, 1, 1.0), {1.0});
  for (std::size_t d : sets.dest)
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(out(d, k), bl(3, k));
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(out(2, k), rep(2, k));
}

TEST(BlendFeatures, HandBuiltHalfStrength) {
  const Matrix rep(4, 2, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  const Matrix bl(4, 2, std::vector<double>{10, 20, 30, 40, 50, 60, 70, 80});
  const IndexSets sets{{0, 3}, {1, 2}, {2, 2}};
  const Matrix t(2, 2, std::vector<double>{0.25, 0.75, 1.0, 0.0});
  const auto out = blend_features(rep, bl, sets, t, {0.5});
  // row 1: 0.5*(3,4) + 0.5*(0.25*(10,20) + 0.75*(70,80)) = (1.5 + 27.5, 2 + 32.5)
  EXPECT_NEAR(out(1, 0), 29.0, 1e-12);
  EXPECT_NEAR(out(1, 1), 34.5, 1e-12);
  // row 2: 0.5*(5,6) + 0.5*(10,20)
  EXPECT_NEAR(out(2, 0), 7.5, 1e-12);
  EXPECT_NEAR(out(2, 1), 13.0, 1e-12);
  EXPECT_EQ(out(0, 0), 1.0);
  EXPECT_EQ(out(3, 1), 8.0);
}

TEST(BlendFeatures, Validation) {
  const Matrix rep(4, 2), bl(4, 2);
  const IndexSets sets{{0}, {1}, {2, 2}};
  EXPECT_THROW(blend_features(rep, bl, sets, Matrix(1, 1, 0.5), {0.5}), Error);
  EXPECT_THROW(blend_features(rep, bl, sets, Matrix(1, 2, 0.5), {0.5}), Error);
  EXPECT_THROW(blend_features(rep, bl, sets, Matrix(1, 1, 1.0), {1.5}), Error);
  EXPECT_THROW(blend_features(rep, Matrix(4, 3), sets, Matrix(1, 1, 1.0), {0.5}), Error);
  EXPECT_THROW(blend_features(rep, bl, {{9}, {1}, {2, 2}}, Matrix(1, 1, 1.0), {0.5}), Error);
}

TEST(BlendFeatures, PropertyLocalityConvexityAffinity) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 4 + rng.index(12), d = 1 + rng.index(5);
    const auto rep = oracle::random_matrix(rng, n, d), bl = oracle::random_matrix(rng, n, d);
    IndexSets sets;
    sets.grid = {1, n};
    for (std::size_t i = 0; i < n; ++i) {
      if (rng.uniform() < 0.5) sets.source.push_back(i);
      if (rng.uniform() < 0.5) sets.dest.push_back(i);
    }
    if (sets.source.empty()) sets.source.push_back(0);
    if (sets.dest.empty()) sets.dest.push_back(n - 1);
    const auto t = stochastic_rows(rng, sets.dest.size(), sets.source.size());
    const auto o0 = blend_features(rep, bl, sets, t, {0.0});
    const auto o1 = blend_features(rep, bl, sets, t, {1.0});
    const auto oh = blend_features(rep, bl, sets, t, {0.5});
    for (std::size_t k = 0; k < oh.size(); ++k)
      EXPECT_NEAR(oh.values()[k], 0.5 * (o0.values()[k] + o1.values()[k]), 1e-9);

    double prev = -1;
    for (double w : {0.0, 0.1, 0.3, 0.6, 0.9, 1.0}) {
      const auto o = blend_features(rep, bl, sets, t, {w});
      for (std::size_t i = 0; i < n; ++i) {
        const bool is_dest = std::binary_search(sets.dest.begin(), sets.dest.end(), i);
        for (std::size_t k = 0; k < d; ++k) {
          if (!is_dest) {
            ASSERT_EQ(o(i, k), rep(i, k));
            continue;
          }
          double lo = rep(i, k), hi = rep(i, k);
          for (std::size_t s : sets.source) {
            lo = std::min(lo, bl(s, k));
            hi = std::max(hi, bl(s, k));
          }
          EXPECT_GE(o(i, k), lo - 1e-12);
          EXPECT_LE(o(i, k), hi + 1e-12);
        }
      }
      Matrix diff = o;
      for (std::size_t k = 0; k < diff.size(); ++k) diff.values()[k] -= rep.values()[k];
      const double norm = oracle::frobenius(diff);
      EXPECT_GE(norm, prev - 1e-12);
      prev = norm;
    }
  }
}

TEST(RunCaof, ZeroStrengthReturnsInput) {
  const auto toy = small_fixture(5);
  const AttentionStack rep(toy.fx.attn_replaced, toy.grid), bl(toy.fx.attn_blend, toy.grid);
  auto p = default_params();
  p.blend.w0 = 0.0;
  p.cost = {0.2, 0.8, 0.5};
  p.tau_source = 10;
  const auto o = to_matrix(toy.fx.o_replaced);
  const auto r = run_caof(rep, bl, o, to_matrix(toy.fx.o_blend), p);
  EXPECT_EQ(r.output.values(), o.values());
}

TEST(RunCaof, MatchesOraclePipeline) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto toy = small_fixture(seed);
    const AttentionStack rep(toy.fx.attn_replaced, toy.grid), bl(toy.fx.attn_blend, toy.grid);
    auto p = default_params();
    p.sinkhorn.tolerance = 1e-13;
    p.sinkhorn.max_iterations = 100000;
    const auto o_rep = to_matrix(toy.fx.o_replaced), o_bl = to_matrix(toy.fx.o_blend);
    const auto r = run_caof(rep, bl, o_rep, o_bl, p);
    const auto expect = oracle::caof_pipeline(toy.fx.attn_replaced, toy.fx.attn_blend, o_rep, o_bl, 2, 2, toy.grid,
                                              60, 0.7, 0.3, 0.1, 0.9);
    for (std::size_t k = 0; k < expect.size(); ++k) EXPECT_NEAR(r.output.values()[k], expect.values()[k], 1e-10);
    EXPECT_TRUE(r.diagnostics.converged);
    EXPECT_EQ(r.diagnostics.source_count, 26u);  // ceil(0.6*64)=39th smallest -> 26 at or above
    EXPECT_EQ(r.diagnostics.dest_count, 26u);
  }
}

TEST(RunCaof, IdenticalBranchesOverlapCompletely) {
  const auto toy = small_fixture(6, 1.0);
  EXPECT_EQ(toy.fx.attn_blend, toy.fx.attn_replaced);
  const AttentionStack rep(toy.fx.attn_replaced, toy.grid), bl(toy.fx.attn_blend, toy.grid);
  const auto o_rep = to_matrix(toy.fx.o_replaced), o_bl = to_matrix(toy.fx.o_blend);
  const auto r = run_caof(rep, bl, o_rep, o_bl, default_params());
  EXPECT_EQ(r.diagnostics.overlap_count, r.diagnostics.dest_count);
  EXPECT_EQ(r.diagnostics.source_count, r.diagnostics.dest_count);
  EXPECT_NE(r.output.values(), o_rep.values());
}

TEST(RunCaof, ShapeErrors) {
  const auto toy = small_fixture(7);
  const AttentionStack rep(toy.fx.attn_replaced, toy.grid);
  const auto o = to_matrix(toy.fx.o_replaced);
  EXPECT_THROW(run_caof(rep, rep, Matrix(63, o.cols()), Matrix(63, o.cols()), default_params()), Error);
  EXPECT_THROW(run_caof(rep, rep, o, Matrix(64, o.cols() + 1), default_params()), Error);
  auto p = default_params();
  p.tau_dest = 120;
  EXPECT_THROW(run_caof(rep, rep, o, o, p), Error);
  p = default_params();
  p.selector_blend = {{6}};
  EXPECT_THROW(run_caof(rep, rep, o, o, p), Error);
}

TEST(RunCaof, DiagnosticsReportNonConvergence) {
  const auto toy = small_fixture(8);
  const AttentionStack rep(toy.fx.attn_replaced, toy.grid), bl(toy.fx.attn_blend, toy.grid);
  auto p = default_params();
  p.cost.gamma = 0.005;
  p.sinkhorn.max_iterations = 1;
  p.sinkhorn.tolerance = 1e-15;
  const auto r = run_caof(rep, bl, to_matrix(toy.fx.o_replaced), to_matrix(toy.fx.o_blend), p);
  EXPECT_FALSE(r.diagnostics.converged);
  EXPECT_EQ(r.diagnostics.iterations, 1u);
  EXPECT_FALSE(r.diagnostics.warnings.empty());
}
