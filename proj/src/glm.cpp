#include "cfviz/glm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "cfviz/errors.hpp"
#include "cfviz/textio.hpp"

namespace cfviz {

namespace {

constexpr double kDegenerateBetaTol = 1e-8;
constexpr double kDegenerateTSentinel = 1e308;

// Lentz's continued fraction for the incomplete beta (Numerical Recipes
// style betacf).
double beta_cf(double a, double b, double x) {
  constexpr double eps = 3e-16;
  constexpr double fpmin = 1e-300;
  constexpr int max_iter = 500;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < fpmin) d = fpmin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < fpmin) d = fpmin;
    c = 1.0 + aa / c;
    if (std::fabs(c) < fpmin) c = fpmin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

std::string covariate_name(std::size_t design_col, const std::vector<std::string>& confounder_names) {
  if (design_col == 0) return "intercept";
  if (design_col == 1) return "score";
  const std::size_t k = design_col - 2;
  if (k < confounder_names.size()) return confounder_names[k];
  return "z" + std::to_string(k);
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ValidationError("incomplete beta: a and b must be > 0");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_pre = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                        a * std::log(x) + b * std::log1p(-x);
  const double pre = std::exp(ln_pre);
  if (x < (a + 1.0) / (a + b + 2.0)) return pre * beta_cf(a, b, x) / a;
  return 1.0 - pre * beta_cf(b, a, 1.0 - x) / b;
}

double t_pvalue(double t, int dof) {
  if (dof < 1) throw ValidationError("t_pvalue: dof must be >= 1, got " + std::to_string(dof));
  if (std::isnan(t)) return 1.0;
  if (std::isinf(t)) return 0.0;
  const double nu = static_cast<double>(dof);
  const double x = nu / (nu + t * t);
  return regularized_incomplete_beta(nu / 2.0, 0.5, x);
}

std::vector<double> FeatureMatrix::column(std::size_t c) const {
  std::vector<double> col(rows);
  for (std::size_t r = 0; r < rows; ++r) col[r] = at(r, c);
  return col;
}

std::size_t ConfoundMask::confounded_count() const {
  std::size_t n = 0;
  for (std::uint8_t b : bits) n += (b == 0);
  return n;
}

std::string ConfoundMask::bit_string() const {
  std::string s;
  s.reserve(bits.size());
  for (std::uint8_t b : bits) s += b ? '1' : '0';
  return s;
}

std::vector<std::uint8_t> ConfoundMask::parse_bits(const std::string& text) {
  std::vector<std::uint8_t> bits;
  bits.reserve(text.size());
  for (char c : text) {
    if (c == '0')
      bits.push_back(0);
    else if (c == '1')
      bits.push_back(1);
    else
      throw FormatError("mask string may contain only 0 and 1");
  }
  return bits;
}

GlmFit fit_glm(const std::vector<double>& response, const std::vector<double>& score,
               const std::vector<std::vector<double>>& confounders,
               const std::vector<std::string>& confounder_names) {
  const std::size_t n = response.size();
  const std::size_t k = confounders.size();
  const std::size_t p = 2 + k;
  if (score.size() != n) throw ShapeError("fit_glm: score length does not match response");
  for (std::size_t j = 0; j < k; ++j) {
    if (confounders[j].size() != n) {
      throw ShapeError("fit_glm: confounder " + covariate_name(j + 2, confounder_names) +
                       " length does not match response");
    }
  }
  if (n <= p) {
    throw ValidationError("fit_glm: need N > K+2 observations, got N=" + std::to_string(n) +
                          " for " + std::to_string(k) + " confounders");
  }
  for (double v : response) {
    if (!std::isfinite(v)) throw ValidationError("fit_glm: response contains non-finite values");
  }

  // Canonicalize each non-intercept column to (x-min)/(max-min). For exactly
  // representable affine rescalings the canonical column is bit-identical,
  // so covariate t and p do not move at all.
  std::vector<const std::vector<double>*> raw_cols(p - 1);
  raw_cols[0] = &score;
  for (std::size_t j = 0; j < k; ++j) raw_cols[j + 1] = &confounders[j];

  std::vector<double> col_min(p - 1), col_range(p - 1);
  std::vector<std::vector<double>> canon(p - 1, std::vector<double>(n));
  for (std::size_t j = 0; j < p - 1; ++j) {
    const std::vector<double>& col = *raw_cols[j];
    double lo = col[0], hi = col[0];
    for (double v : col) {
      if (!std::isfinite(v)) {
        throw ValidationError("fit_glm: column " + covariate_name(j + 1, confounder_names) +
                              " contains non-finite values");
      }
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi == lo) {
      throw SingularityError("fit_glm: design column '" + covariate_name(j + 1, confounder_names) +
                             "' is constant (collinear with intercept)");
    }
    col_min[j] = lo;
    col_range[j] = hi - lo;
    for (std::size_t i = 0; i < n; ++i) canon[j][i] = (col[i] - lo) / (hi - lo);
  }

  // Design matrix (column-major), Householder QR.
  std::vector<std::vector<double>> a(p, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) a[0][i] = 1.0;
  for (std::size_t j = 1; j < p; ++j) a[j] = canon[j - 1];
  std::vector<double> qty(response);

  std::vector<std::vector<double>> r_mat(p, std::vector<double>(p, 0.0));
  for (std::size_t j = 0; j < p; ++j) {
    double norm2 = 0.0;
    for (std::size_t i = j; i < n; ++i) norm2 += a[j][i] * a[j][i];
    const double norm = std::sqrt(norm2);
    if (norm <= 1e-10 * std::sqrt(static_cast<double>(n))) {
      throw SingularityError("fit_glm: design column '" + covariate_name(j, confounder_names) +
                             "' is collinear with earlier columns");
    }
    const double alpha = a[j][j] >= 0.0 ? -norm : norm;
    std::vector<double> v(n - j);
    v[0] = a[j][j] - alpha;
    for (std::size_t i = j + 1; i < n; ++i) v[i - j] = a[j][i];
    double vnorm2 = 0.0;
    for (double x : v) vnorm2 += x * x;
    if (vnorm2 > 0.0) {
      for (std::size_t col = j; col < p; ++col) {
        double dot = 0.0;
        for (std::size_t i = j; i < n; ++i) dot += v[i - j] * a[col][i];
        const double f = 2.0 * dot / vnorm2;
        for (std::size_t i = j; i < n; ++i) a[col][i] -= f * v[i - j];
      }
      double dot = 0.0;
      for (std::size_t i = j; i < n; ++i) dot += v[i - j] * qty[i];
      const double f = 2.0 * dot / vnorm2;
      for (std::size_t i = j; i < n; ++i) qty[i] -= f * v[i - j];
    }
    for (std::size_t row = 0; row <= j; ++row) r_mat[row][j] = a[j][row];
    const double diag = std::fabs(r_mat[j][j]);
    if (diag <= 1e-10 * std::sqrt(static_cast<double>(n))) {
      throw SingularityError("fit_glm: design column '" + covariate_name(j, confounder_names) +
                             "' is collinear with earlier columns");
    }
  }

  // beta_c = R^-1 Q^T y by back substitution.
  std::vector<double> beta_c(p);
  for (std::size_t jj = p; jj-- > 0;) {
    double acc = qty[jj];
    for (std::size_t col = jj + 1; col < p; ++col) acc -= r_mat[jj][col] * beta_c[col];
    beta_c[jj] = acc / r_mat[jj][jj];
  }

  // RSS from the residual part of Q^T y.
  double rss = 0.0;
  for (std::size_t i = p; i < n; ++i) rss += qty[i] * qty[i];

  const int dof = static_cast<int>(n - p);
  const double sigma2 = rss / dof;

  // (X^T X)^-1 = R^-1 R^-T, columns of R^-1 by back substitution.
  std::vector<std::vector<double>> r_inv(p, std::vector<double>(p, 0.0));
  for (std::size_t col = 0; col < p; ++col) {
    std::vector<double> e(p, 0.0);
    e[col] = 1.0;
    for (std::size_t jj = p; jj-- > 0;) {
      double acc = e[jj];
      for (std::size_t cc = jj + 1; cc < p; ++cc) acc -= r_mat[jj][cc] * r_inv[cc][col];
      r_inv[jj][col] = acc / r_mat[jj][jj];
    }
  }
  std::vector<std::vector<double>> cov_c(p, std::vector<double>(p, 0.0));
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      double acc = 0.0;
      for (std::size_t l = 0; l < p; ++l) acc += r_inv[i][l] * r_inv[j][l];
      cov_c[i][j] = sigma2 * acc;
    }
  }

  // Map back to raw units: beta_raw_j = beta_c_j / range_j (j>=1),
  // beta_raw_0 = beta_c_0 - sum beta_c_j * min_j / range_j.
  GlmFit fit;
  fit.residual_dof = dof;
  fit.rss = rss;
  fit.beta.resize(p);
  fit.se.resize(p);
  fit.t.resize(p);
  fit.p.resize(p);

  double b0 = beta_c[0];
  for (std::size_t j = 1; j < p; ++j) b0 -= beta_c[j] * (col_min[j - 1] / col_range[j - 1]);
  fit.beta[0] = b0;
  for (std::size_t j = 1; j < p; ++j) fit.beta[j] = beta_c[j] / col_range[j - 1];

  // Raw intercept variance via the back-transform row a = (1, -m1/r1, ...).
  {
    std::vector<double> row(p);
    row[0] = 1.0;
    for (std::size_t j = 1; j < p; ++j) row[j] = -(col_min[j - 1] / col_range[j - 1]);
    double var0 = 0.0;
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < p; ++j) var0 += row[i] * cov_c[i][j] * row[j];
    fit.se[0] = std::sqrt(std::max(var0, 0.0));
  }
  for (std::size_t j = 1; j < p; ++j) fit.se[j] = std::sqrt(std::max(cov_c[j][j], 0.0)) / col_range[j - 1];

  fit.degenerate = rss < 1e-12 * static_cast<double>(n);
  if (fit.degenerate) {
    for (std::size_t j = 0; j < p; ++j) {
      fit.se[j] = 0.0;
      if (std::fabs(fit.beta[j]) > kDegenerateBetaTol) {
        fit.t[j] = fit.beta[j] > 0.0 ? kDegenerateTSentinel : -kDegenerateTSentinel;
        fit.p[j] = 0.0;
      } else {
        fit.t[j] = 0.0;
        fit.p[j] = 1.0;
      }
    }
    return fit;
  }

  // Covariate t computed in canonical units (equal to raw-unit t in exact
  // arithmetic, and bitwise stable under exact column rescaling).
  fit.t[0] = fit.beta[0] / fit.se[0];
  fit.p[0] = t_pvalue(fit.t[0], dof);
  for (std::size_t j = 1; j < p; ++j) {
    fit.t[j] = beta_c[j] / std::sqrt(std::max(cov_c[j][j], 0.0));
    fit.p[j] = t_pvalue(fit.t[j], dof);
  }
  return fit;
}

FeatureTestResult test_feature(const std::vector<double>& response, const std::vector<double>& score,
                               const std::vector<std::vector<double>>& confounders, double alpha,
                               const std::vector<std::string>& confounder_names) {
  if (!(alpha > 0.0) || !(alpha < 1.0)) throw ValidationError("test_feature: alpha must be in (0,1)");
  FeatureTestResult res;
  res.fit = fit_glm(response, score, confounders, confounder_names);
  res.confounder_p.assign(res.fit.p.begin() + 2, res.fit.p.end());
  double min_p = 1.0;
  for (double pv : res.confounder_p) min_p = std::min(min_p, pv);
  res.confounded = min_p < alpha;
  return res;
}

ConfoundReport build_confound_mask(const FeatureMatrix& features, const std::vector<double>& score,
                                   const std::vector<std::vector<double>>& confounders, double alpha,
                                   bool bonferroni, const std::vector<std::string>& confounder_names) {
  if (!(alpha > 0.0) || !(alpha < 1.0)) throw ValidationError("build_confound_mask: alpha must be in (0,1)");
  const std::size_t m = features.cols;
  const std::size_t k = confounders.size();
  if (k == 0) throw ValidationError("build_confound_mask: need at least one confounder");

  ConfoundReport report;
  report.n = features.rows;
  report.m = m;
  report.k = k;
  report.alpha = alpha;
  report.bonferroni = bonferroni;
  report.effective_alpha = bonferroni ? alpha / (static_cast<double>(m) * static_cast<double>(k)) : alpha;
  report.confounder_names = confounder_names;
  if (report.confounder_names.empty()) {
    for (std::size_t j = 0; j < k; ++j) report.confounder_names.push_back("z" + std::to_string(j));
  }
  report.mask.alpha = report.effective_alpha;
  report.mask.bits.assign(m, 1);
  report.mask.min_confounder_p.assign(m, 1.0);

  for (std::size_t j = 0; j < m; ++j) {
    FeatureGlmRecord rec;
    rec.index = static_cast<int>(j);
    const std::vector<double> col = features.column(j);

    bool constant = true;
    for (double v : col) {
      if (v != col[0]) {
        constant = false;
        break;
      }
    }
    if (constant) {
      rec.zero_variance = true;
      rec.min_confounder_p = 1.0;
    } else {
      try {
        FeatureTestResult t = test_feature(col, score, confounders, report.effective_alpha,
                                           report.confounder_names);
        rec.fit = std::move(t.fit);
        rec.confounded = t.confounded;
        rec.min_confounder_p = 1.0;
        for (double pv : t.confounder_p) rec.min_confounder_p = std::min(rec.min_confounder_p, pv);
      } catch (const std::exception& e) {
        rec.error = e.what();  // column skipped, bit stays 1
      }
    }
    report.mask.bits[j] = rec.confounded ? 0 : 1;
    report.mask.min_confounder_p[j] = rec.min_confounder_p;
    report.features.push_back(std::move(rec));
  }
  return report;
}

namespace {

nlohmann::json fit_to_json(const GlmFit& fit) {
  return nlohmann::json{{"beta", fit.beta}, {"se", fit.se},   {"t", fit.t},
                        {"p", fit.p},       {"rss", fit.rss}, {"residual_dof", fit.residual_dof},
                        {"degenerate", fit.degenerate}};
}

GlmFit fit_from_json(const nlohmann::json& j) {
  GlmFit fit;
  fit.beta = j.at("beta").get<std::vector<double>>();
  fit.se = j.at("se").get<std::vector<double>>();
  fit.t = j.at("t").get<std::vector<double>>();
  fit.p = j.at("p").get<std::vector<double>>();
  fit.rss = j.at("rss").get<double>();
  fit.residual_dof = j.at("residual_dof").get<int>();
  fit.degenerate = j.at("degenerate").get<bool>();
  return fit;
}

}  // namespace

void write_glm_report(const ConfoundReport& report, const std::filesystem::path& path) {
  nlohmann::json j;
  j["alpha"] = report.alpha;
  j["bonferroni"] = report.bonferroni;
  j["effective_alpha"] = report.effective_alpha;
  j["n"] = report.n;
  j["m"] = report.m;
  j["k"] = report.k;
  j["confounders"] = report.confounder_names;
  j["mask"] = report.mask.bit_string();
  nlohmann::json feats = nlohmann::json::array();
  for (const FeatureGlmRecord& rec : report.features) {
    nlohmann::json f;
    f["index"] = rec.index;
    f["confounded"] = rec.confounded;
    f["zero_variance"] = rec.zero_variance;
    f["min_confounder_p"] = rec.min_confounder_p;
    f["error"] = rec.error;
    if (!rec.zero_variance && rec.error.empty()) f["fit"] = fit_to_json(rec.fit);
    feats.push_back(std::move(f));
  }
  j["features"] = std::move(feats);
  write_text_file(path, j.dump(2) + "\n");
}

ConfoundReport read_glm_report(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  ConfoundReport report;
  try {
    report.alpha = j.at("alpha").get<double>();
    report.bonferroni = j.at("bonferroni").get<bool>();
    report.effective_alpha = j.at("effective_alpha").get<double>();
    report.n = j.at("n").get<std::size_t>();
    report.m = j.at("m").get<std::size_t>();
    report.k = j.at("k").get<std::size_t>();
    report.confounder_names = j.at("confounders").get<std::vector<std::string>>();
    report.mask.bits = ConfoundMask::parse_bits(j.at("mask").get<std::string>());
    report.mask.alpha = report.effective_alpha;
    for (const nlohmann::json& f : j.at("features")) {
      FeatureGlmRecord rec;
      rec.index = f.at("index").get<int>();
      rec.confounded = f.at("confounded").get<bool>();
      rec.zero_variance = f.at("zero_variance").get<bool>();
      rec.min_confounder_p = f.at("min_confounder_p").get<double>();
      rec.error = f.at("error").get<std::string>();
      if (f.contains("fit")) rec.fit = fit_from_json(f.at("fit"));
      report.mask.min_confounder_p.push_back(rec.min_confounder_p);
      report.features.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": missing or invalid field: " + e.what());
  }
  if (report.mask.bits.size() != report.m) {
    throw FormatError(path.string() + ": mask length does not match m");
  }
  return report;
}

void write_feature_matrix_csv(const FeatureMatrix& features, const std::filesystem::path& path) {
  std::string csv;
  for (std::size_t c = 0; c < features.cols; ++c) {
    if (c) csv += ",";
    csv += "f_" + std::to_string(c);
  }
  csv += "\n";
  for (std::size_t r = 0; r < features.rows; ++r) {
    for (std::size_t c = 0; c < features.cols; ++c) {
      if (c) csv += ",";
      csv += format_double(features.at(r, c));
    }
    csv += "\n";
  }
  write_text_file(path, csv);
}

FeatureMatrix read_feature_matrix_csv(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::string header;
  if (!std::getline(in, header)) throw FormatError(path.string() + ": empty file");

  std::size_t cols = 0;
  {
    std::stringstream hs(header);
    std::string cell;
    while (std::getline(hs, cell, ',')) {
      if (cell != "f_" + std::to_string(cols)) {
        throw FormatError(path.string() + ": unexpected header column '" + cell + "'");
      }
      ++cols;
    }
  }
  if (cols == 0) throw FormatError(path.string() + ": no feature columns");

  FeatureMatrix fm;
  fm.cols = cols;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::size_t c = 0;
    while (std::getline(ls, cell, ',')) {
      fm.values.push_back(parse_double(cell, "feature matrix"));
      ++c;
    }
    if (c != cols) throw FormatError(path.string() + ": row with wrong column count");
    ++fm.rows;
  }
  return fm;
}

}  // namespace cfviz
