#ifndef ATTNBLEND_TOOLS_CLI_HPP
#define ATTNBLEND_TOOLS_CLI_HPP

// attnblend command-line driver: caof | sasf | metrics | gen-synthetic.
//
// Exit codes: 0 success, 1 validation error, 2 numerical failure. Errors are
// reported as a single stderr line:
//   attnblend: error code=<Code> message=<text>

#include <algorithm>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "attnblend/attnblend.hpp"

namespace attnblend::cli {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitNumerical = 2;

/// Thrown for non-convergence beyond tolerance; mapped to exit code 2.
struct NumericalFailure : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// small parsers shared by the subcommands

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

inline std::vector<std::size_t> parse_index_list(const std::string& s, const char* what) {
  std::vector<std::size_t> out;
  for (const auto& part : split(s, ',')) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    require(ec == std::errc{} && ptr == part.data() + part.size() && !part.empty(), ErrorCode::InvalidArgument,
            std::string(what) + ": '" + s + "' is not a comma-separated index list");
    out.push_back(v);
  }
  require(!out.empty(), ErrorCode::InvalidArgument, std::string(what) + " is empty");
  return out;
}

inline Grid parse_grid(const std::string& s) {
  const auto parts = split(s, 'x');
  require(parts.size() == 2, ErrorCode::InvalidArgument, "grid must be given as ROWSxCOLS, got '" + s + "'");
  const auto r = parse_index_list(parts[0], "grid rows");
  const auto c = parse_index_list(parts[1], "grid cols");
  require(r.size() == 1 && c.size() == 1 && r[0] > 0 && c[0] > 0, ErrorCode::InvalidArgument, "bad grid '" + s + "'");
  return {r[0], c[0]};
}

inline MetricWeights parse_weights(const std::string& s) {
  const auto parts = split(s, ',');
  require(parts.size() == 4, ErrorCode::InvalidArgument, "--weights expects wR,wB,wS,wL");
  std::vector<double> w;
  for (const auto& p : parts) {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(p.data(), p.data() + p.size(), v);
    require(ec == std::errc{} && ptr == p.data() + p.size(), ErrorCode::InvalidArgument,
            "--weights entry '" + p + "' is not a number");
    w.push_back(v);
  }
  MetricWeights mw{w[0], w[1], w[2], w[3]};
  mw.validate();
  return mw;
}

inline Pooling parse_pooling(const std::string& s) {
  if (s == "mean") return Pooling::Mean;
  if (s == "max") return Pooling::Max;
  fail(ErrorCode::InvalidArgument, "pooling must be mean or max");
}

inline std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

inline std::string grid_string(Grid g) { return std::to_string(g.rows) + "x" + std::to_string(g.cols); }

// ---------------------------------------------------------------------------
// JSON config files: keys are flag names without the leading dashes. A flag
// given on the command line always wins.

class ConfigLayer {
 public:
  ConfigLayer(CLI::App* app, std::string path) : app_(app), path_(std::move(path)) {}

  void load() {
    if (path_.empty()) return;
    const auto bytes = read_file_bytes(path_);
    try {
      cfg_ = json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
      fail(ErrorCode::InvalidArgument, "config " + path_ + ": " + e.what());
    }
    require(cfg_.is_object(), ErrorCode::InvalidArgument, "config " + path_ + " must be a JSON object");
    for (const auto& [key, value] : cfg_.items()) {
      const auto* opt = app_->get_option_no_throw("--" + key);
      require(opt != nullptr && key != "config", ErrorCode::InvalidArgument,
              "config " + path_ + ": unknown key '" + key + "'");
    }
  }

  template <class T>
  void apply(const std::string& key, T& field) const {
    if (cfg_.is_null() || !cfg_.contains(key)) return;
    if (app_->get_option("--" + key)->count() > 0) return;
    try {
      field = cfg_.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(ErrorCode::InvalidArgument, "config key '" + key + "': " + e.what());
    }
  }

 private:
  CLI::App* app_;
  std::string path_;
  json cfg_;
};

inline void write_json(const fs::path& path, const json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

inline DenseArray load_input(const std::string& path) {
  require(!path.empty(), ErrorCode::InvalidArgument, "missing input path");
  return load_array(path);
}

inline fs::path sidecar_path(const std::string& out, const std::string& explicit_path) {
  return explicit_path.empty() ? fs::path(out + ".json") : fs::path(explicit_path);
}

// ---------------------------------------------------------------------------
// caof

struct CaofOptions {
  std::string attn_replaced, attn_blend, features_replaced, features_blend, out, diagnostics, config;
  std::string tokens_replaced, tokens_blend, pooling = "mean", grid;
  double tau_source = 60.0, tau_dest = 60.0;
  double lambda_feature = 0.7, lambda_spatial = 0.3, gamma = 0.1;
  std::size_t max_iters = 1000;
  double tolerance = 1e-6;
  double w0 = 0.9;
  bool direct = false, strict = false, allow_empty = false;
};

inline void add_caof(CLI::App& app, CaofOptions& o) {
  auto* c = app.add_subcommand("caof", "Cross-attention object fusion of two attention branches");
  c->add_option("--attn-replaced", o.attn_replaced, "H x N x M attention stack of the replaced prompt")->required();
  c->add_option("--attn-blend", o.attn_blend, "H x N x M attention stack of the blend prompt")->required();
  c->add_option("--features-replaced", o.features_replaced, "N x D concatenated head outputs, replaced branch")
      ->required();
  c->add_option("--features-blend", o.features_blend, "N x D concatenated head outputs, blend branch")->required();
  c->add_option("--tokens-replaced", o.tokens_replaced, "text-token columns of the replaced object, e.g. 2 or 2,3")
      ->required();
  c->add_option("--tokens-blend", o.tokens_blend, "text-token columns of the blend object")->required();
  c->add_option("--out", o.out, "blended N x D output array")->required();
  c->add_option("--diagnostics", o.diagnostics, "diagnostics JSON path (default: <out>.json)");
  c->add_option("--config", o.config, "JSON file with default flag values");
  c->add_option("--pooling", o.pooling, "multi-token pooling: mean or max");
  c->add_option("--grid", o.grid, "spatial grid ROWSxCOLS (default: square)");
  c->add_option("--tau-source", o.tau_source, "source percentile in [0, 100]");
  c->add_option("--tau-dest", o.tau_dest, "destination percentile in [0, 100]");
  c->add_option("--lambda-feature", o.lambda_feature, "weight of the cosine feature distance");
  c->add_option("--lambda-spatial", o.lambda_spatial, "weight of the normalised spatial distance");
  c->add_option("--gamma", o.gamma, "entropic regularisation");
  c->add_option("--max-iters", o.max_iters, "Sinkhorn iteration cap");
  c->add_option("--tolerance", o.tolerance, "Sinkhorn L1 marginal tolerance");
  c->add_option("--w0", o.w0, "blend strength in [0, 1]");
  c->add_flag("--direct", o.direct, "use the plain (non-log-domain) Sinkhorn kernel");
  c->add_flag("--strict", o.strict, "fail on attention rows that do not sum to 1 within 1e-4");
  c->add_flag("--allow-empty", o.allow_empty, "pass features through when the destination set is empty");
}

inline int cmd_caof(CLI::App& sub, CaofOptions& o, std::ostream& out, std::ostream& err) {
  ConfigLayer cfg(&sub, o.config);
  cfg.load();
  cfg.apply("tokens-replaced", o.tokens_replaced);
  cfg.apply("tokens-blend", o.tokens_blend);
  cfg.apply("pooling", o.pooling);
  cfg.apply("grid", o.grid);
  cfg.apply("tau-source", o.tau_source);
  cfg.apply("tau-dest", o.tau_dest);
  cfg.apply("lambda-feature", o.lambda_feature);
  cfg.apply("lambda-spatial", o.lambda_spatial);
  cfg.apply("gamma", o.gamma);
  cfg.apply("max-iters", o.max_iters);
  cfg.apply("tolerance", o.tolerance);
  cfg.apply("w0", o.w0);
  cfg.apply("direct", o.direct);
  cfg.apply("strict", o.strict);
  cfg.apply("allow-empty", o.allow_empty);

  CaofParams p;
  p.selector_replaced = {parse_index_list(o.tokens_replaced, "--tokens-replaced"), parse_pooling(o.pooling)};
  p.selector_blend = {parse_index_list(o.tokens_blend, "--tokens-blend"), parse_pooling(o.pooling)};
  p.tau_source = o.tau_source;
  p.tau_dest = o.tau_dest;
  p.cost = {o.lambda_feature, o.lambda_spatial, o.gamma};
  p.sinkhorn = {o.max_iters, o.tolerance, !o.direct};
  p.blend = {o.w0};
  p.allow_empty = o.allow_empty;

  const auto a_rep = load_input(o.attn_replaced);
  const auto a_bl = load_input(o.attn_blend);
  const auto f_rep = load_input(o.features_replaced);
  const auto f_bl = load_input(o.features_blend);
  require(a_rep.ndim() == 3, ErrorCode::InvalidShape, "attention stacks must be H x N x M");
  const Grid grid = o.grid.empty() ? square_grid(a_rep.shape[1]) : parse_grid(o.grid);
  const AttentionStack stack_rep(a_rep, grid), stack_bl(a_bl, grid);

  std::vector<std::string> warnings;
  for (const auto* s : {&stack_rep, &stack_bl}) {
    if (const auto bad = s->count_invalid_rows()) {
      const std::string msg = std::to_string(bad) + " attention rows in " +
                              (s == &stack_rep ? o.attn_replaced : o.attn_blend) +
                              " are not distributions within 1e-4";
      require(!o.strict, ErrorCode::NonStochasticRow, msg);
      warnings.push_back(msg);
    }
  }

  const auto result = run_caof(stack_rep, stack_bl, to_matrix(f_rep), to_matrix(f_bl), p);
  const auto& d = result.diagnostics;
  for (const auto& w : d.warnings) warnings.push_back(w);

  json diag = {
      {"source_count", d.source_count},
      {"dest_count", d.dest_count},
      {"overlap_count", d.overlap_count},
      {"iterations", d.iterations},
      {"marginal_error", d.marginal_error},
      {"converged", d.converged},
      {"passed_through", d.passed_through},
      {"warnings", warnings},
      {"parameters",
       {{"attn-replaced", o.attn_replaced},
        {"attn-blend", o.attn_blend},
        {"features-replaced", o.features_replaced},
        {"features-blend", o.features_blend},
        {"out", o.out},
        {"tokens-replaced", join(p.selector_replaced.indices)},
        {"tokens-blend", join(p.selector_blend.indices)},
        {"pooling", o.pooling},
        {"grid", grid_string(grid)},
        {"tau-source", p.tau_source},
        {"tau-dest", p.tau_dest},
        {"lambda-feature", p.cost.lambda_feature},
        {"lambda-spatial", p.cost.lambda_spatial},
        {"gamma", p.cost.gamma},
        {"max-iters", p.sinkhorn.max_iterations},
        {"tolerance", p.sinkhorn.tolerance},
        {"direct", o.direct},
        {"w0", p.blend.w0},
        {"strict", o.strict},
        {"allow-empty", o.allow_empty}}},
  };
  write_json(sidecar_path(o.out, o.diagnostics), diag);
  for (const auto& w : warnings) err << "attnblend: warning: " << w << "\n";

  if (!d.passed_through && p.blend.w0 != 0.0 && !d.converged &&
      d.marginal_error > 100.0 * p.sinkhorn.tolerance)
    throw NumericalFailure(ErrorCode::NumericalOverflow,
                           "Sinkhorn did not converge: marginal error " + format_real(d.marginal_error) + " after " +
                               std::to_string(d.iterations) + " iterations");

  save_array(to_array(result.output, f_rep.dtype), o.out);
  out << "caof: |S|=" << d.source_count << " |D|=" << d.dest_count << " iterations=" << d.iterations
      << " marginal_error=" << format_real(d.marginal_error) << " -> " << o.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sasf

struct SasfOptions {
  std::string replaced, style, out, diagnostics, config;
  double alpha = 0.5, sigma = 2.5;
  std::size_t kernel_size = 5;
  bool kv = false;
  std::string k_target, v_target, k_style, v_style, k_out, v_out;
};

inline void add_sasf(CLI::App& app, SasfOptions& o) {
  auto* c = app.add_subcommand("sasf", "Self-attention style fusion (DSIN + key/value substitution)");
  c->add_option("--replaced", o.replaced, "N x D replaced-object features")->required();
  c->add_option("--style", o.style, "N x D style features")->required();
  c->add_option("--out", o.out, "output N x D features")->required();
  c->add_option("--diagnostics", o.diagnostics, "parameter sidecar path (default: <out>.json)");
  c->add_option("--config", o.config, "JSON file with default flag values");
  c->add_option("--alpha", o.alpha, "high-frequency injection fraction in [0, 1]");
  c->add_option("--sigma", o.sigma, "Gaussian width along the token axis");
  c->add_option("--kernel-size", o.kernel_size, "odd kernel length k = 2m + 1");
  c->add_flag("--kv", o.kv, "also substitute the target keys/values with the style ones");
  c->add_option("--k-target", o.k_target, "target keys (shape check only)");
  c->add_option("--v-target", o.v_target, "target values (shape check only)");
  c->add_option("--k-style", o.k_style, "style keys");
  c->add_option("--v-style", o.v_style, "style values");
  c->add_option("--k-out", o.k_out, "where to write the substituted keys");
  c->add_option("--v-out", o.v_out, "where to write the substituted values");
}

inline int cmd_sasf(CLI::App& sub, SasfOptions& o, std::ostream& out, std::ostream&) {
  ConfigLayer cfg(&sub, o.config);
  cfg.load();
  cfg.apply("alpha", o.alpha);
  cfg.apply("sigma", o.sigma);
  cfg.apply("kernel-size", o.kernel_size);
  cfg.apply("kv", o.kv);

  DsinConfig dsin{o.alpha, o.sigma, o.kernel_size};
  dsin.validate();
  const auto rep = load_input(o.replaced);
  const auto sty = load_input(o.style);
  const auto result = dsin_inject(to_matrix(rep), to_matrix(sty), dsin);

  std::optional<KeyValue> kv;
  if (o.kv) {
    for (const auto* p : {&o.k_target, &o.v_target, &o.k_style, &o.v_style, &o.k_out, &o.v_out})
      require(!p->empty(), ErrorCode::InvalidArgument,
              "--kv needs --k-target, --v-target, --k-style, --v-style, --k-out and --v-out");
    kv = kv_substitute(load_input(o.k_target), load_input(o.v_target), load_input(o.k_style),
                       load_input(o.v_style));
  }

  json diag = {{"parameters",
                {{"replaced", o.replaced},
                 {"style", o.style},
                 {"out", o.out},
                 {"alpha", dsin.alpha},
                 {"sigma", dsin.sigma},
                 {"kernel-size", dsin.kernel_size},
                 {"eps", dsin.eps},
                 {"kv", o.kv},
                 {"k-style", o.k_style},
                 {"v-style", o.v_style},
                 {"k-out", o.k_out},
                 {"v-out", o.v_out}}}};
  write_json(sidecar_path(o.out, o.diagnostics), diag);
  save_array(to_array(result, rep.dtype), o.out);
  if (kv) {
    save_array(kv->key, o.k_out);
    save_array(kv->value, o.v_out);
  }
  out << "sasf: alpha=" << format_real(dsin.alpha) << " sigma=" << format_real(dsin.sigma)
      << " kernel-size=" << dsin.kernel_size << " -> " << o.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// metrics

struct MetricsOptions {
  std::vector<std::string> scores, images;
  std::string out_scores, out_texture, config, norm_ranges;
  std::string weights = "1,1,1,1";
  std::string norm_scope = "batch";
  double epsilon = 0.1;
  double hfs_cutoff = 0.25;
  bool paper_numerator = false;
};

inline void add_metrics(CLI::App& app, MetricsOptions& o) {
  auto* c = app.add_subcommand("metrics", "BOM/BOSM from score tables and LV/GC/HFS from gray images");
  c->add_option("--scores", o.scores, "score CSV files (sample_id,clip_o,clip_r,clip_b,clip_s,lpips_o)");
  c->add_option("--images", o.images, "2-D gray image arrays with intensities in [0, 1]");
  c->add_option("--out-scores", o.out_scores, "output CSV: sample_id,bom,bosm and normalised inputs");
  c->add_option("--out-texture", o.out_texture, "output CSV: sample_id,lv,gc,hfs");
  c->add_option("--config", o.config, "JSON file with default flag values");
  c->add_option("--weights", o.weights, "wR,wB,wS,wL (default 1,1,1,1)");
  c->add_option("--norm-scope", o.norm_scope,
                "min/max source: batch (all score files together), file (each file separately), "
                "explicit (--norm-ranges)");
  c->add_option("--norm-ranges", o.norm_ranges,
                "JSON {\"clip_o\": [min, max], ..., \"fidelity\": [min, max]} for --norm-scope explicit; "
                "fidelity is 1 - lpips_o");
  c->add_option("--epsilon", o.epsilon, "normalisation floor (default 0.1)");
  c->add_option("--hfs-cutoff", o.hfs_cutoff,
                "HFS radial cutoff; r = 1 at the Nyquist corner of the centred spectrum (default 0.25)");
  c->add_flag("--paper-numerator", o.paper_numerator, "BOSM numerator wR+wB+wS (omit wL)");
  c->footer(
      "Texture metrics use intensities scaled to 0..255. LV: variance of the 4-neighbour Laplacian "
      "with mirror padding. GC: contrast of the symmetric 256-level co-occurrence matrix accumulated over "
      "offsets (0,1) and (1,0).");
}

inline std::map<ScoreColumn, ColumnRange> load_norm_ranges(const std::string& path) {
  require(!path.empty(), ErrorCode::InvalidArgument, "--norm-scope explicit needs --norm-ranges");
  const auto bytes = read_file_bytes(path);
  std::map<ScoreColumn, ColumnRange> out;
  try {
    const auto j = json::parse(bytes.begin(), bytes.end());
    for (const auto& [key, value] : j.items()) {
      const auto it = std::find_if(kAllScoreColumns.begin(), kAllScoreColumns.end(),
                                   [&](ScoreColumn c) { return column_name(c) == key; });
      require(it != kAllScoreColumns.end(), ErrorCode::InvalidArgument, "unknown normalisation column '" + key + "'");
      const auto pair = value.get<std::vector<double>>();
      require(pair.size() == 2, ErrorCode::InvalidArgument, "range for '" + key + "' must be [min, max]");
      out[*it] = {pair[0], pair[1]};
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, "norm ranges " + path + ": " + e.what());
  }
  return out;
}

// Per-column means printed after a metrics run; cells may be missing (an
// empty clip_s), in which case the column mean covers the present ones.
class SummaryTable {
 public:
  explicit SummaryTable(std::vector<std::string> columns)
      : columns_(std::move(columns)), sums_(columns_.size(), 0.0), counts_(columns_.size(), 0) {}

  void add(const std::vector<std::optional<double>>& row) {
    for (std::size_t c = 0; c < columns_.size(); ++c)
      if (row[c]) {
        sums_[c] += *row[c];
        ++counts_[c];
      }
    ++rows_;
  }

  void print(std::ostream& out, const std::string& title) const {
    out << title << ": " << rows_ << " rows\n";
    out << "  " << std::left << std::setw(14) << "column" << std::right << std::setw(6) << "n" << "  mean\n";
    for (std::size_t c = 0; c < columns_.size(); ++c) {
      out << "  " << std::left << std::setw(14) << columns_[c] << std::right << std::setw(6) << counts_[c] << "  "
          << (counts_[c] ? format_real(sums_[c] / static_cast<double>(counts_[c])) : std::string("-")) << "\n";
    }
  }

 private:
  std::vector<std::string> columns_;
  std::vector<double> sums_;
  std::vector<std::size_t> counts_;
  std::size_t rows_ = 0;
};

inline int cmd_metrics(CLI::App& sub, MetricsOptions& o, std::ostream& out, std::ostream&) {
  ConfigLayer cfg(&sub, o.config);
  cfg.load();
  cfg.apply("weights", o.weights);
  cfg.apply("norm-scope", o.norm_scope);
  cfg.apply("norm-ranges", o.norm_ranges);
  cfg.apply("epsilon", o.epsilon);
  cfg.apply("hfs-cutoff", o.hfs_cutoff);
  cfg.apply("paper-numerator", o.paper_numerator);
  require(!o.scores.empty() || !o.images.empty(), ErrorCode::InvalidArgument, "give --scores and/or --images");
  require(o.norm_scope == "batch" || o.norm_scope == "file" || o.norm_scope == "explicit",
          ErrorCode::InvalidArgument, "--norm-scope must be batch, file or explicit");
  const MetricWeights weights = parse_weights(o.weights);

  if (!o.scores.empty()) {
    std::vector<ScoreTable> tables;
    for (const auto& p : o.scores) tables.push_back(load_scores(p));

    std::vector<NormalizedTable> normalized;
    NormalizationSpec spec;
    spec.epsilon = o.epsilon;
    if (o.norm_scope == "explicit") {
      spec.ranges = load_norm_ranges(o.norm_ranges);
      for (const auto& t : tables)
        for (const auto& [c, r] : batch_ranges(t.rows))
          require(spec.ranges.count(c) > 0, ErrorCode::InvalidArgument,
                  "--norm-ranges lacks column " + std::string(column_name(c)));
    }
    if (o.norm_scope == "file") {
      for (const auto& t : tables) normalized.push_back(normalize_scores(t, spec));
    } else {
      ScoreTable all;
      std::set<std::string> ids;
      for (const auto& t : tables)
        for (const auto& r : t.rows) {
          require(ids.insert(r.sample_id).second, ErrorCode::DuplicateSampleId,
                  "sample_id '" + r.sample_id + "' appears in more than one score file");
          all.rows.push_back(r);
        }
      normalized.push_back(normalize_scores(all, spec));
    }

    std::string csv = "sample_id,bom,bosm,clip_o_hat,clip_r_hat,clip_b_hat,clip_s_hat,fidelity_hat\n";
    SummaryTable summary({"bom", "bosm", "clip_o_hat", "clip_r_hat", "clip_b_hat", "clip_s_hat", "fidelity_hat"});
    for (const auto& t : normalized)
      for (const auto& r : t.rows) {
        const double b = bom(r.clip_r, r.clip_b, r.fidelity, weights);
        std::optional<double> bs;
        if (r.clip_s) bs = bosm(r.clip_r, r.clip_b, *r.clip_s, r.fidelity, weights, o.paper_numerator);
        summary.add({b, bs, r.clip_o, r.clip_r, r.clip_b, r.clip_s, r.fidelity});
        auto cell = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string{}; };
        csv += csv_detail::escape(r.sample_id) + "," + format_real(b) + "," + cell(bs) + "," + format_real(r.clip_o) +
               "," + format_real(r.clip_r) + "," + format_real(r.clip_b) + "," + cell(r.clip_s) + "," +
               format_real(r.fidelity) + "\n";
      }
    if (!o.out_scores.empty()) write_text_atomic(o.out_scores, csv);
    summary.print(out, "scores");
  }

  if (!o.images.empty()) {
    std::string csv = "sample_id,lv,gc,hfs\n";
    SummaryTable summary({"lv", "gc", "hfs"});
    for (const auto& p : o.images) {
      const GrayImage img(load_input(p));
      const auto t = texture_scores(img, o.hfs_cutoff);
      summary.add({t.lv, t.gc, t.hfs});
      csv += csv_detail::escape(fs::path(p).stem().string()) + "," + format_real(t.lv) + "," + format_real(t.gc) +
             "," + format_real(t.hfs) + "\n";
    }
    if (!o.out_texture.empty()) write_text_atomic(o.out_texture, csv);
    summary.print(out, "texture");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gen-synthetic

struct GenOptions {
  std::string out_dir, grid = "64x64", config;
  std::uint64_t seed = 42;
  std::size_t heads = 10, text_tokens = 77, head_dim = 64, samples = 20, object_token = 2;
  double overlap = 0.5;
};

inline void add_gen(CLI::App& app, GenOptions& o) {
  auto* c = app.add_subcommand("gen-synthetic", "Write a deterministic synthetic fixture set");
  c->add_option("--out-dir", o.out_dir, "directory to write into (created if missing)")->required();
  c->add_option("--config", o.config, "JSON file with default flag values");
  c->add_option("--seed", o.seed, "64-bit generator seed");
  c->add_option("--heads", o.heads, "attention heads H");
  c->add_option("--grid", o.grid, "spatial grid ROWSxCOLS (N = ROWS*COLS)");
  c->add_option("--text-tokens", o.text_tokens, "text tokens M");
  c->add_option("--head-dim", o.head_dim, "per-head dimension d_k (D = H * d_k)");
  c->add_option("--overlap", o.overlap, "1 makes the blend attention identical to the replaced attention");
  c->add_option("--samples", o.samples, "rows in the synthetic score table");
  c->add_option("--object-token", o.object_token, "text-token column of the object in both prompts");
}

inline int cmd_gen(CLI::App& sub, GenOptions& o, std::ostream& out, std::ostream&) {
  ConfigLayer cfg(&sub, o.config);
  cfg.load();
  cfg.apply("seed", o.seed);
  cfg.apply("heads", o.heads);
  cfg.apply("grid", o.grid);
  cfg.apply("text-tokens", o.text_tokens);
  cfg.apply("head-dim", o.head_dim);
  cfg.apply("overlap", o.overlap);
  cfg.apply("samples", o.samples);
  cfg.apply("object-token", o.object_token);

  SyntheticSpec spec;
  spec.seed = o.seed;
  spec.heads = o.heads;
  spec.grid = parse_grid(o.grid);
  spec.text_tokens = o.text_tokens;
  spec.head_dim = o.head_dim;
  spec.overlap = o.overlap;
  spec.samples = o.samples;
  spec.object_token = o.object_token;
  const auto fx = generate_fixture(spec);

  std::error_code ec;
  fs::create_directories(o.out_dir, ec);
  require(!ec, ErrorCode::IoFailure, "cannot create " + o.out_dir);
  const fs::path dir(o.out_dir);

  Manifest m;
  m.run_id = "synthetic-seed" + std::to_string(o.seed);
  m.prompts = {{"replaced", "synthetic replaced object"},
               {"blend", "synthetic blend object"},
               {"style", "synthetic style"}};
  const std::pair<const char*, const DenseArray*> arrays[] = {
      {"attn_replaced", &fx.attn_replaced}, {"attn_blend", &fx.attn_blend}, {"o_replaced", &fx.o_replaced},
      {"o_blend", &fx.o_blend},             {"f_replaced", &fx.f_replaced}, {"f_style", &fx.f_style},
      {"k_target", &fx.k_target},           {"v_target", &fx.v_target},   {"k_style", &fx.k_style},
      {"v_style", &fx.v_style}};
  for (const auto& [name, arr] : arrays) {
    const std::string file = std::string(name) + ".npy";
    save_array(*arr, dir / file);
    m.entries.push_back({name, file, arr->shape, dtype_name(arr->dtype), "synthetic", 0});
  }
  save_scores(fx.scores, dir / "scores.csv");

  auto j = to_json(m);
  j["generator"] = {{"rng", Rng::kName},
                    {"seed", o.seed},
                    {"heads", spec.heads},
                    {"grid", grid_string(spec.grid)},
                    {"text-tokens", spec.text_tokens},
                    {"head-dim", spec.head_dim},
                    {"overlap", spec.overlap},
                    {"samples", spec.samples},
                    {"object-token", spec.object_token}};
  j["scores"] = "scores.csv";
  write_json(dir / "manifest.json", j);
  out << "gen-synthetic: wrote " << std::size(arrays) << " arrays, scores.csv and manifest.json to " << o.out_dir
      << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline void report(std::ostream& err, ErrorCode code, const std::string& message) {
  std::string flat = message;
  std::replace(flat.begin(), flat.end(), '\n', ' ');
  err << "attnblend: error code=" << to_string(code) << " message=" << flat << "\n";
}

/// Runs the CLI on `args` (without the program name).
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"attnblend: attention-fusion editing primitives on captured tensors", "attnblend"};
  app.require_subcommand(1);
  CaofOptions caof;
  SasfOptions sasf;
  MetricsOptions metrics;
  GenOptions gen;
  add_caof(app, caof);
  add_sasf(app, sasf);
  add_metrics(app, metrics);
  add_gen(app, gen);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report(err, ErrorCode::InvalidArgument, e.what());
    return kExitValidation;
  }

  try {
    if (auto* s = app.get_subcommand("caof"); s->parsed()) return cmd_caof(*s, caof, out, err);
    if (auto* s = app.get_subcommand("sasf"); s->parsed()) return cmd_sasf(*s, sasf, out, err);
    if (auto* s = app.get_subcommand("metrics"); s->parsed()) return cmd_metrics(*s, metrics, out, err);
    if (auto* s = app.get_subcommand("gen-synthetic"); s->parsed()) return cmd_gen(*s, gen, out, err);
  } catch (const NumericalFailure& e) {
    report(err, e.code(), e.detail());
    return kExitNumerical;
  } catch (const Error& e) {
    report(err, e.code(), e.detail());
    const bool numerical = e.code() == ErrorCode::NumericalOverflow || e.code() == ErrorCode::NonFiniteCost;
    return numerical ? kExitNumerical : kExitValidation;
  } catch (const std::exception& e) {
    report(err, ErrorCode::IoFailure, e.what());
    return kExitValidation;
  }
  return kExitValidation;
}

}  // namespace attnblend::cli

#endif  // ATTNBLEND_TOOLS_CLI_HPP
