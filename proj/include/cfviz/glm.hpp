#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cfviz {

// One per-feature regression f^j ~ intercept + score + confounders.
// Coefficient order everywhere: [intercept, score, confounder_0, ...].
struct GlmFit {
  std::vector<double> beta;
  std::vector<double> se;
  std::vector<double> t;
  std::vector<double> p;  // two-sided
  int residual_dof = 0;
  double rss = 0.0;
  bool degenerate = false;  // near-zero residual; p forced to 0/1
};

struct FeatureMatrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;  // row-major, rows = images, cols = features
  std::string model_id;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  std::vector<double> column(std::size_t c) const;
};

// b^j = 0 marks feature j as confounded (excluded from partial saliency).
struct ConfoundMask {
  std::vector<std::uint8_t> bits;
  double alpha = 0.05;  // the threshold actually applied (after Bonferroni, if any)
  std::vector<double> min_confounder_p;

  std::size_t feature_count() const { return bits.size(); }
  std::size_t confounded_count() const;
  std::string bit_string() const;
  static std::vector<std::uint8_t> parse_bits(const std::string& text);
};

struct FeatureTestResult {
  bool confounded = false;
  std::vector<double> confounder_p;
  GlmFit fit;
};

struct FeatureGlmRecord {
  int index = 0;
  GlmFit fit;
  bool confounded = false;
  bool zero_variance = false;
  double min_confounder_p = 1.0;
  std::string error;  // nonempty when the column was skipped
};

struct ConfoundReport {
  ConfoundMask mask;
  std::vector<FeatureGlmRecord> features;
  std::vector<std::string> confounder_names;
  std::size_t n = 0, m = 0, k = 0;
  double alpha = 0.05;  // nominal
  bool bonferroni = false;
  double effective_alpha = 0.05;
};

// Regularized incomplete beta I_x(a,b) by Lentz continued fraction;
// absolute error <= 1e-12 over the arguments used here.
double regularized_incomplete_beta(double a, double b, double x);

// Two-sided Student-t p-value, p = I_{dof/(dof+t^2)}(dof/2, 1/2).
double t_pvalue(double t, int dof);

// OLS of response on [1, score, confounders...]. Internally each non-
// intercept column is canonicalized to (x-min)/(max-min) and the fit mapped
// back to raw units, which makes covariate t/p exactly invariant under
// exactly-representable affine rescalings of a column. Throws
// SingularityError naming the collinear column on rank deficiency and
// ValidationError when N <= K+2.
GlmFit fit_glm(const std::vector<double>& response, const std::vector<double>& score,
               const std::vector<std::vector<double>>& confounders,
               const std::vector<std::string>& confounder_names = {});

// Confounded iff min over confounders of p < alpha (strict). The score
// coefficient's p is reported but never used for masking.
FeatureTestResult test_feature(const std::vector<double>& response,
                               const std::vector<double>& score,
                               const std::vector<std::vector<double>>& confounders,
                               double alpha,
                               const std::vector<std::string>& confounder_names = {});

// Tests every column of F. Zero-variance columns are marked unconfounded and
// flagged; per-column fit errors are recorded, not fatal. The Bonferroni
// option divides alpha by M*K.
ConfoundReport build_confound_mask(const FeatureMatrix& features, const std::vector<double>& score,
                                   const std::vector<std::vector<double>>& confounders, double alpha,
                                   bool bonferroni = false,
                                   const std::vector<std::string>& confounder_names = {});

void write_glm_report(const ConfoundReport& report, const std::filesystem::path& path);
ConfoundReport read_glm_report(const std::filesystem::path& path);

// CSV with header f_0..f_{M-1}, one row per image.
void write_feature_matrix_csv(const FeatureMatrix& features, const std::filesystem::path& path);
FeatureMatrix read_feature_matrix_csv(const std::filesystem::path& path);

}  // namespace cfviz
