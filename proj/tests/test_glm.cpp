#include <cmath>
#include <filesystem>

#include <doctest.h>

#include "cfviz/errors.hpp"
#include "cfviz/glm.hpp"
#include "cfviz/rng.hpp"
#include "cfviz/textio.hpp"
#include "oracles.hpp"

using cfviz::ConfoundMask;
using cfviz::ConfoundReport;
using cfviz::FeatureMatrix;
using cfviz::GlmFit;
using cfviz::Rng;

namespace fs = std::filesystem;

namespace {

const std::vector<double> kScore5 = {0.0, 0.25, 0.5, 0.75, 1.0};

std::vector<double> random_vector(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_SUITE_BEGIN("glm");

TEST_CASE("t_pvalue fixed points and tails") {
  CHECK(cfviz::t_pvalue(0.0, 1) == 1.0);
  CHECK(cfviz::t_pvalue(0.0, 100) == 1.0);
  CHECK(cfviz::t_pvalue(1e6, 10) < 1e-12);
  CHECK(cfviz::t_pvalue(-1e6, 10) < 1e-12);
  CHECK_THROWS_AS(cfviz::t_pvalue(1.0, 0), cfviz::ValidationError);
}

TEST_CASE("t_pvalue hits the classic 5% quantile at t=2.228, dof=10") {
  // frozen from the adaptive-Simpson oracle: 0.050011771817111327
  const double p = cfviz::t_pvalue(2.228, 10);
  CHECK(std::fabs(p - 0.0500) <= 5e-4);
  CHECK(p == doctest::Approx(0.050011771817111327).epsilon(1e-12));
}

TEST_CASE("t_pvalue matches numeric integration on a 50-point grid and is monotone in |t|") {
  const double ts[5] = {0.1, 0.7, 1.5, 3.0, 6.0};
  const int dofs[10] = {1, 2, 3, 5, 8, 10, 30, 120, 500, 1020};
  for (int dof : dofs) {
    double prev = 1.0;
    for (double t : ts) {
      const double mine = cfviz::t_pvalue(t, dof);
      const double ref = oracles::t_pvalue_ref(t, dof);
      CHECK(std::fabs(mine - ref) <= 1e-9);
      CHECK(mine < prev);
      prev = mine;
      CHECK(cfviz::t_pvalue(-t, dof) == mine);  // two-sided symmetry
    }
  }
}

TEST_CASE("the spec's N=5 instance is exactly collinear (z = 4s+1) and is rejected by name") {
  const std::vector<double> z = {1, 2, 3, 4, 5};
  const std::vector<double> f = {1.1, 1.9, 3.2, 3.8, 5.1};
  try {
    cfviz::fit_glm(f, kScore5, {z}, {"z"});
    FAIL("expected SingularityError");
  } catch (const cfviz::SingularityError& e) {
    CHECK(std::string(e.what()).find("z") != std::string::npos);
  }
}

TEST_CASE("fit_glm matches the frozen normal-equations oracle on the perturbed N=5 instance") {
  const std::vector<double> z = {1, 2, 3, 5, 4};
  const std::vector<double> f = {1.1, 1.9, 3.2, 3.8, 5.1};
  const GlmFit fit = cfviz::fit_glm(f, kScore5, {z});

  // frozen from the independent normal-equations + numeric t-CDF oracle
  const double beta[3] = {1.2357894736842119, 4.5473684210526297, -0.1631578947368422};
  const double se[3] = {0.19572155018739357, 0.48740365906485295, 0.12185091476621324};
  const double p[3] = {0.024177534494283962, 0.011294083219907269, 0.31246786060903109};
  REQUIRE(fit.beta.size() == 3);
  CHECK(fit.residual_dof == 2);
  for (int i = 0; i < 3; ++i) {
    CHECK(std::fabs(fit.beta[i] - beta[i]) <= 1e-10);
    CHECK(std::fabs(fit.se[i] - se[i]) <= 1e-10);
    CHECK(std::fabs(fit.p[i] - p[i]) <= 1e-10);
  }
  CHECK(std::fabs(fit.rss - 0.05642105263157917) <= 1e-12);

  // same instance against the live oracle as well
  const oracles::OlsRef ref = oracles::ols_ref(f, kScore5, {z});
  for (int i = 0; i < 3; ++i) {
    CHECK(std::fabs(fit.beta[i] - ref.beta[i]) <= 1e-10);
    CHECK(std::fabs(fit.se[i] - ref.se[i]) <= 1e-10);
    CHECK(std::fabs(fit.t[i] - ref.t[i]) <= 1e-9);
    CHECK(std::fabs(fit.p[i] - ref.p[i]) <= 1e-10);
  }
}

TEST_CASE("constant response collapses to the degenerate intercept fit") {
  Rng rng(7);
  const std::vector<double> s = random_vector(12, rng, 0.0, 1.0);
  const std::vector<double> z = random_vector(12, rng, 1.0, 3.0);
  const std::vector<double> f(12, 4.25);
  const GlmFit fit = cfviz::fit_glm(f, s, {z});
  CHECK(fit.degenerate);
  CHECK(fit.beta[0] == doctest::Approx(4.25).epsilon(1e-9));
  CHECK(std::fabs(fit.beta[1]) <= 1e-8);
  CHECK(std::fabs(fit.beta[2]) <= 1e-8);
  CHECK(fit.t[2] == 0.0);
  CHECK(fit.p[2] == 1.0);
}

TEST_CASE("affine confounder rescaling: 10z+7 on integer data is bit-identical") {
  const std::vector<double> z = {1, 2, 3, 5, 4};
  const std::vector<double> f = {1.1, 1.9, 3.2, 3.8, 5.1};
  std::vector<double> z10(5);
  for (int i = 0; i < 5; ++i) z10[i] = 10.0 * z[i] + 7.0;  // exact in doubles

  const GlmFit a = cfviz::fit_glm(f, kScore5, {z});
  const GlmFit b = cfviz::fit_glm(f, kScore5, {z10});
  CHECK(a.t[2] == b.t[2]);
  CHECK(a.p[2] == b.p[2]);
  CHECK(a.beta[2] == doctest::Approx(10.0 * b.beta[2]).epsilon(1e-12));
}

TEST_CASE("affine confounder rescaling on arbitrary reals moves t by at most rounding") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 20 + rng.below(30);
    const std::vector<double> s = random_vector(n, rng, 0.0, 1.0);
    const std::vector<double> z0 = random_vector(n, rng, -2.0, 2.0);
    const std::vector<double> z1 = random_vector(n, rng, -2.0, 2.0);
    std::vector<double> f(n);
    for (std::size_t i = 0; i < n; ++i) f[i] = 0.4 * s[i] + 0.3 * z0[i] + rng.uniform(-0.5, 0.5);

    const double scale = rng.uniform(0.1, 20.0);
    const double shift = rng.uniform(-5.0, 5.0);
    std::vector<double> z0r(n);
    for (std::size_t i = 0; i < n; ++i) z0r[i] = scale * z0[i] + shift;

    const GlmFit a = cfviz::fit_glm(f, s, {z0, z1});
    const GlmFit b = cfviz::fit_glm(f, s, {z0r, z1});
    for (int c = 2; c < 4; ++c) {
      CHECK(std::fabs(a.t[c] - b.t[c]) <= 1e-9 * std::max(1.0, std::fabs(a.t[c])));
      CHECK(std::fabs(a.p[c] - b.p[c]) <= 1e-9);
    }
  }
}

TEST_CASE("fit_glm agrees with the normal-equations oracle on 100 random instances") {
  Rng rng(27);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t k = 1 + rng.below(3);
    const std::size_t n = k + 4 + rng.below(46 - k);
    const std::vector<double> s = random_vector(n, rng, 0.0, 1.0);
    std::vector<std::vector<double>> z;
    for (std::size_t j = 0; j < k; ++j) z.push_back(random_vector(n, rng, -3.0, 3.0));
    std::vector<double> f(n);
    for (std::size_t i = 0; i < n; ++i) {
      f[i] = 1.0 + 0.5 * s[i] + rng.uniform(-1.0, 1.0);
      for (std::size_t j = 0; j < k; ++j) f[i] += 0.25 * z[j][i];
    }

    const GlmFit fit = cfviz::fit_glm(f, s, z);
    const oracles::OlsRef ref = oracles::ols_ref(f, s, z);
    REQUIRE(fit.beta.size() == ref.beta.size());
    CHECK(fit.residual_dof == ref.dof);
    for (std::size_t c = 0; c < fit.beta.size(); ++c) {
      CHECK(std::fabs(fit.beta[c] - ref.beta[c]) <= 1e-10 * std::max(1.0, std::fabs(ref.beta[c])));
      CHECK(std::fabs(fit.se[c] - ref.se[c]) <= 1e-10 * std::max(1.0, std::fabs(ref.se[c])));
      CHECK(std::fabs(fit.p[c] - ref.p[c]) <= 1e-9);
    }

    // residual orthogonality: |X^T r|_inf over the raw design
    std::vector<double> resid(n);
    for (std::size_t i = 0; i < n; ++i) {
      double fitval = fit.beta[0] + fit.beta[1] * s[i];
      for (std::size_t j = 0; j < k; ++j) fitval += fit.beta[2 + j] * z[j][i];
      resid[i] = f[i] - fitval;
    }
    double max_dot = 0.0;
    for (std::size_t c = 0; c < 2 + k; ++c) {
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double xic = c == 0 ? 1.0 : (c == 1 ? s[i] : z[c - 2][i]);
        dot += xic * resid[i];
      }
      max_dot = std::max(max_dot, std::fabs(dot));
    }
    CHECK(max_dot <= 1e-8 * static_cast<double>(n));
  }
}

TEST_CASE("fit_glm validates sizes and dof") {
  Rng rng(37);
  const std::vector<double> s = random_vector(3, rng);
  const std::vector<double> z = random_vector(3, rng);
  CHECK_THROWS_AS(cfviz::fit_glm({1.0, 2.0, 3.0}, s, {z}), cfviz::ValidationError);  // N == K+2
  CHECK_THROWS_AS(cfviz::fit_glm({1.0, 2.0}, s, {z}), cfviz::ShapeError);
}

TEST_CASE("test_feature flags a response that is the confounder itself") {
  Rng rng(47);
  const std::size_t n = 64;
  const std::vector<double> s = random_vector(n, rng, 0.0, 1.0);
  const std::vector<double> z = random_vector(n, rng, 1.0, 5.0);
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = z[i] + 1e-6 * rng.uniform(-1.0, 1.0);

  const auto res = cfviz::test_feature(f, s, {z}, 0.05);
  CHECK(res.confounded);
  CHECK(res.confounder_p[0] < 1e-10);
}

TEST_CASE("test_feature keeps independent noise at a tiny alpha, and alpha->0 clears any flag") {
  Rng rng(57);
  const std::size_t n = 512;
  const std::vector<double> s = random_vector(n, rng, 0.0, 1.0);
  const std::vector<double> z = random_vector(n, rng, 1.0, 5.0);
  const std::vector<double> f = random_vector(n, rng);

  const auto res = cfviz::test_feature(f, s, {z}, 1e-9);
  CHECK_FALSE(res.confounded);

  // even a real dependence cannot clear an alpha this small
  std::vector<double> f2(n);
  for (std::size_t i = 0; i < n; ++i) f2[i] = 0.3 * z[i] + rng.uniform(-1.0, 1.0);
  const auto strict = cfviz::test_feature(f2, s, {z}, 1e-300);
  CHECK_FALSE(strict.confounded);
}

TEST_CASE("build_confound_mask semantics, zero-variance columns, Bonferroni") {
  Rng rng(67);
  const std::size_t n = 128, m = 6;
  const std::vector<double> s = random_vector(n, rng, 0.0, 1.0);
  const std::vector<double> z = random_vector(n, rng, 1.0, 5.0);

  FeatureMatrix fm;
  fm.rows = n;
  fm.cols = m;
  fm.values.resize(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    fm.at(i, 0) = z[i] + 1e-3 * rng.uniform(-1.0, 1.0);  // strongly confounded
    fm.at(i, 1) = rng.uniform(-1.0, 1.0);                // independent noise
    fm.at(i, 2) = 3.5;                                   // zero variance
    fm.at(i, 3) = 0.9 * z[i] + 0.1 * rng.uniform(-1.0, 1.0);
    fm.at(i, 4) = s[i] + 0.05 * rng.uniform(-1.0, 1.0);  // explained by the score
    fm.at(i, 5) = rng.uniform(-1.0, 1.0);
  }

  const ConfoundReport report = cfviz::build_confound_mask(fm, s, {z}, 0.05, false, {"z"});
  CHECK(report.m == m);
  CHECK(report.mask.bits.size() == m);
  CHECK(report.mask.bits[0] == 0);
  CHECK(report.mask.bits[2] == 1);
  CHECK(report.features[2].zero_variance);
  CHECK(report.mask.bits[3] == 0);

  // definitional: b^j == 0 exactly when min confounder p < alpha
  std::size_t flagged = 0;
  for (std::size_t j = 0; j < m; ++j) {
    const bool below = report.mask.min_confounder_p[j] < report.effective_alpha;
    CHECK((report.mask.bits[j] == 0) == below);
    flagged += below;
  }
  CHECK(report.mask.confounded_count() == flagged);

  // alpha below every p clears the mask entirely; column 0's p underflows to
  // exactly 0 (t ~ 4e4), so the threshold-limit check uses the others
  FeatureMatrix moderate;
  moderate.rows = n;
  moderate.cols = 4;
  moderate.values.resize(n * 4);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < 4; ++j) moderate.at(i, j) = fm.at(i, j + 1);
  const ConfoundReport none = cfviz::build_confound_mask(moderate, s, {z}, 1e-300, false, {"z"});
  for (std::size_t j = 0; j < 4; ++j) CHECK(none.mask.min_confounder_p[j] > 0.0);
  CHECK(none.mask.confounded_count() == 0);

  const ConfoundReport bonf = cfviz::build_confound_mask(fm, s, {z}, 0.05, true, {"z"});
  CHECK(bonf.effective_alpha == doctest::Approx(0.05 / 6.0).epsilon(1e-12));
  CHECK(bonf.mask.confounded_count() <= report.mask.confounded_count());
}

TEST_CASE("the mask is invariant under exact affine rescaling of a confounder") {
  Rng rng(77);
  const std::size_t n = 64, m = 8;
  const std::vector<double> s = random_vector(n, rng, 0.0, 1.0);
  // dyadic confounder values: k/64 with k integer, so 4*z+3 is exact
  std::vector<double> z(n);
  for (std::size_t i = 0; i < n; ++i) z[i] = static_cast<double>(rng.below(512)) / 64.0;

  FeatureMatrix fm;
  fm.rows = n;
  fm.cols = m;
  fm.values.resize(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      fm.at(i, j) = (j % 2 == 0 ? 0.5 * z[i] : 0.0) + rng.uniform(-1.0, 1.0);

  std::vector<double> zr(n);
  for (std::size_t i = 0; i < n; ++i) zr[i] = 4.0 * z[i] + 3.0;

  const ConfoundReport a = cfviz::build_confound_mask(fm, s, {z}, 0.05);
  const ConfoundReport b = cfviz::build_confound_mask(fm, s, {zr}, 0.05);
  CHECK(a.mask.bits == b.mask.bits);
  for (std::size_t j = 0; j < m; ++j) {
    CHECK(a.mask.min_confounder_p[j] == b.mask.min_confounder_p[j]);  // bitwise
  }
}

TEST_CASE("glm report and feature matrix files round trip") {
  Rng rng(87);
  const std::size_t n = 32, m = 4;
  const std::vector<double> s = random_vector(n, rng, 0.0, 1.0);
  const std::vector<double> z = random_vector(n, rng, 1.0, 5.0);
  FeatureMatrix fm;
  fm.rows = n;
  fm.cols = m;
  fm.model_id = "seed-1";
  fm.values.resize(n * m);
  for (std::size_t i = 0; i < n * m; ++i) fm.values[i] = rng.uniform(-2.0, 2.0);

  const ConfoundReport report = cfviz::build_confound_mask(fm, s, {z}, 0.05, false, {"sigma_B"});

  const fs::path dir = fs::temp_directory_path() / "cfviz_tests" / "glm_io";
  fs::create_directories(dir);

  cfviz::write_glm_report(report, dir / "glm_report.json");
  const ConfoundReport loaded = cfviz::read_glm_report(dir / "glm_report.json");
  CHECK(loaded.mask.bits == report.mask.bits);
  CHECK(loaded.alpha == report.alpha);
  CHECK(loaded.n == report.n);
  CHECK(loaded.m == report.m);
  CHECK(loaded.k == report.k);
  REQUIRE(loaded.features.size() == report.features.size());
  for (std::size_t j = 0; j < m; ++j) {
    CHECK(loaded.features[j].fit.p == report.features[j].fit.p);
    CHECK(loaded.features[j].fit.beta == report.features[j].fit.beta);
    CHECK(loaded.features[j].min_confounder_p == report.features[j].min_confounder_p);
  }

  cfviz::write_feature_matrix_csv(fm, dir / "features.csv");
  const FeatureMatrix fm2 = cfviz::read_feature_matrix_csv(dir / "features.csv");
  CHECK(fm2.rows == fm.rows);
  CHECK(fm2.cols == fm.cols);
  CHECK(fm2.values == fm.values);

  // header must be exactly f_0..f_{M-1}
  const std::string csv = cfviz::read_text_file(dir / "features.csv");
  CHECK(csv.rfind("f_0,f_1,f_2,f_3\n", 0) == 0);

  cfviz::write_text_file(dir / "bad.csv", "f_0,f_9\n1,2\n");
  CHECK_THROWS_AS(cfviz::read_feature_matrix_csv(dir / "bad.csv"), cfviz::FormatError);
}

TEST_SUITE_END();
