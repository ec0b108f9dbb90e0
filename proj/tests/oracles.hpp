// Independent reference implementations used only by tests. Nothing here may
// call into the code paths it checks: the conv/pool oracles are plain nested
// loops, the OLS oracle uses raw normal equations with Gauss-Jordan, and the
// t-CDF oracle integrates the density with adaptive Simpson.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "cfviz/rng.hpp"
#include "cfviz/tensor.hpp"

namespace oracles {

// Cross-correlation, 2x2 kernel, zero pad bottom/right, spatial size kept.
inline cfviz::Tensor conv2d_ref(const cfviz::Tensor& in, const cfviz::Tensor& k,
                                const cfviz::Tensor& b) {
  const std::size_t c_in = in.extent(0), h = in.extent(1), w = in.extent(2);
  const std::size_t c_out = k.extent(0);
  cfviz::Tensor out({c_out, h, w});
  for (std::size_t co = 0; co < c_out; ++co)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = b[co];
        for (std::size_t ci = 0; ci < c_in; ++ci)
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t yy = y + dy, xx = x + dx;
              const double v = (yy < h && xx < w) ? in[(ci * h + yy) * w + xx] : 0.0;
              acc += v * k[((co * c_in + ci) * 2 + dy) * 2 + dx];
            }
        out[(co * h + y) * w + x] = acc;
      }
  return out;
}

inline cfviz::Tensor maxpool2_ref(const cfviz::Tensor& in) {
  const std::size_t c = in.extent(0), h = in.extent(1), w = in.extent(2);
  cfviz::Tensor out({c, h / 2, w / 2});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h / 2; ++y)
      for (std::size_t x = 0; x < w / 2; ++x) {
        double best = in[(ch * h + 2 * y) * w + 2 * x];
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx)
            best = std::max(best, in[(ch * h + 2 * y + dy) * w + 2 * x + dx]);
        out[(ch * h / 2 + y) * (w / 2) + x] = best;
      }
  return out;
}

// ---- Student-t two-sided p by adaptive Simpson on the density ----

inline double t_density(double x, double nu) {
  const double ln = std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0) -
                    0.5 * std::log(nu * M_PI) - (nu + 1.0) / 2.0 * std::log1p(x * x / nu);
  return std::exp(ln);
}

inline double simpson(const std::function<double(double)>& f, double a, double b, double fa,
                      double fb, double fm, double eps, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0) return left + right;
  if (std::fabs(left + right - whole) <= 15.0 * eps) return left + right + (left + right - whole) / 15.0;
  return simpson(f, a, m, fa, fm, flm, eps / 2.0, depth - 1) +
         simpson(f, m, b, fm, fb, frm, eps / 2.0, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b, double eps) {
  const double m = 0.5 * (a + b);
  return simpson(f, a, b, f(a), f(b), f(m), eps, 60);
}

inline double t_pvalue_ref(double t, int dof, double eps = 1e-13) {
  const double nu = static_cast<double>(dof);
  const double at = std::fabs(t);
  if (at == 0.0) return 1.0;
  const double central = integrate([nu](double x) { return t_density(x, nu); }, 0.0, at, eps);
  return 1.0 - 2.0 * central;
}

// ---- OLS by raw normal equations + Gauss-Jordan ----

struct OlsRef {
  std::vector<double> beta, se, t, p;
  double rss = 0.0;
  int dof = 0;
};

// Solves A x = rhs for square A, and writes inv(A); partial pivoting.
inline void gauss_jordan(std::vector<std::vector<double>> a, std::vector<double> rhs,
                         std::vector<double>& x, std::vector<std::vector<double>>& inv) {
  const std::size_t p = a.size();
  inv.assign(p, std::vector<double>(p, 0.0));
  for (std::size_t i = 0; i < p; ++i) inv[i][i] = 1.0;
  for (std::size_t col = 0; col < p; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < p; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
    if (std::fabs(a[pivot][col]) < 1e-300) throw std::runtime_error("oracle: singular matrix");
    std::swap(a[col], a[pivot]);
    std::swap(inv[col], inv[pivot]);
    std::swap(rhs[col], rhs[pivot]);
    const double d = a[col][col];
    for (std::size_t c = 0; c < p; ++c) {
      a[col][c] /= d;
      inv[col][c] /= d;
    }
    rhs[col] /= d;
    for (std::size_t r = 0; r < p; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      if (f == 0.0) continue;
      for (std::size_t c = 0; c < p; ++c) {
        a[r][c] -= f * a[col][c];
        inv[r][c] -= f * inv[col][c];
      }
      rhs[r] -= f * rhs[col];
    }
  }
  x = rhs;
}

inline OlsRef ols_ref(const std::vector<double>& y, const std::vector<double>& s,
                      const std::vector<std::vector<double>>& z) {
  const std::size_t n = y.size();
  const std::size_t p = 2 + z.size();
  std::vector<std::vector<double>> design(n, std::vector<double>(p));
  for (std::size_t i = 0; i < n; ++i) {
    design[i][0] = 1.0;
    design[i][1] = s[i];
    for (std::size_t k = 0; k < z.size(); ++k) design[i][2 + k] = z[k][i];
  }
  std::vector<std::vector<double>> xtx(p, std::vector<double>(p, 0.0));
  std::vector<double> xty(p, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < p; ++a) {
      xty[a] += design[i][a] * y[i];
      for (std::size_t b = 0; b < p; ++b) xtx[a][b] += design[i][a] * design[i][b];
    }

  OlsRef out;
  std::vector<std::vector<double>> inv;
  gauss_jordan(xtx, xty, out.beta, inv);

  out.dof = static_cast<int>(n - p);
  for (std::size_t i = 0; i < n; ++i) {
    double fit = 0.0;
    for (std::size_t a = 0; a < p; ++a) fit += design[i][a] * out.beta[a];
    const double r = y[i] - fit;
    out.rss += r * r;
  }
  const double sigma2 = out.rss / out.dof;
  out.se.resize(p);
  out.t.resize(p);
  out.p.resize(p);
  for (std::size_t a = 0; a < p; ++a) {
    out.se[a] = std::sqrt(sigma2 * inv[a][a]);
    out.t[a] = out.beta[a] / out.se[a];
    out.p[a] = t_pvalue_ref(out.t[a], out.dof);
  }
  return out;
}

}  // namespace oracles
