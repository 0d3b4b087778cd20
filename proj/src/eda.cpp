#include "stressor/eda.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <limits>

#include "stressor/error.hpp"

namespace stressor {

namespace {

using SpMat = Eigen::SparseMatrix<double>;
using Vec = Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

struct Arma {
  double ar0, ar1, ar2;
};

Arma bateman_arma(double dt, double tau0, double tau1) {
  const double a0 = 1.0 / tau0;
  const double a1 = 1.0 / tau1;
  const double scale = (a1 - a0) * dt * dt;
  return {(a1 * dt + 2.0) * (a0 * dt + 2.0) / scale, (2.0 * a1 * a0 * dt * dt - 8.0) / scale,
          (a1 * dt - 2.0) * (a0 * dt - 2.0) / scale};
}

void check_params(const CvxEdaParams& p) {
  if (!(p.tau0_s > p.tau1_s && p.tau1_s > 0.0)) {
    throw Error(ErrorKind::kValidation, "cvxEDA requires tau0 > tau1 > 0");
  }
  if (!(p.alpha >= 0.0) || !(p.gamma >= 0.0)) {
    throw Error(ErrorKind::kValidation, "cvxEDA alpha and gamma must be non-negative");
  }
  if (!(p.knot_spacing_s > 0.0) || !(p.solver_rate_hz > 0.0) || p.max_iterations < 1 ||
      !(p.tolerance > 0.0)) {
    throw Error(ErrorKind::kValidation, "invalid cvxEDA solver settings");
  }
}

// Column j of the spline basis covers rows [start, start + values.size()).
struct SplineColumn {
  std::size_t start;
  std::vector<double> values;
};

std::vector<SplineColumn> spline_columns(std::size_t n, std::size_t k) {
  std::vector<double> tri;
  for (std::size_t i = 1; i < k; ++i) tri.push_back(static_cast<double>(i));
  for (std::size_t i = k; i > 0; --i) tri.push_back(static_cast<double>(i));
  std::vector<double> spl(2 * tri.size() - 1, 0.0);
  for (std::size_t i = 0; i < tri.size(); ++i) {
    for (std::size_t j = 0; j < tri.size(); ++j) spl[i + j] += tri[i] * tri[j];
  }
  const double peak = *std::max_element(spl.begin(), spl.end());
  for (double& v : spl) v /= peak;

  const auto len = static_cast<std::ptrdiff_t>(spl.size());
  const std::ptrdiff_t lead = len / 2;
  std::vector<SplineColumn> cols;
  for (std::size_t knot = 0; knot < n; knot += k) {
    SplineColumn c;
    const std::ptrdiff_t first = static_cast<std::ptrdiff_t>(knot) - lead;
    const std::ptrdiff_t b = std::max<std::ptrdiff_t>(0, first);
    const std::ptrdiff_t e = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(n), first + len);
    c.start = static_cast<std::size_t>(b);
    for (std::ptrdiff_t r = b; r < e; ++r) c.values.push_back(spl[static_cast<std::size_t>(r - first)]);
    cols.push_back(std::move(c));
  }
  return cols;
}

std::size_t knot_samples(double knot_spacing_s, double dt) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(knot_spacing_s / dt)));
}

// Adjoint of bateman_response: A^-T M^T v.
std::vector<double> bateman_adjoint(const std::vector<double>& v, const Arma& ar) {
  const std::size_t n = v.size();
  std::vector<double> u(n), w(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    u[i] = v[i] + (i + 1 < n ? 2.0 * v[i + 1] : 0.0) + (i + 2 < n ? v[i + 2] : 0.0);
  }
  for (std::size_t k = n; k-- > 0;) {
    double s = u[k];
    if (k + 1 < n) s -= ar.ar1 * w[k + 1];
    if (k + 2 < n) s -= ar.ar2 * w[k + 2];
    w[k] = s / ar.ar0;
  }
  return w;
}

struct Model {
  std::size_t n = 0, nb = 0, nvar = 0;
  Arma ar{};
  std::vector<SplineColumn> spline;
  SpMat G;  // [M B C]
  SpMat A;  // driver operator on the q block, n x n
};

Model build_model(std::size_t n, double dt, const CvxEdaParams& p) {
  Model m;
  m.n = n;
  m.ar = bateman_arma(dt, p.tau0_s, p.tau1_s);
  m.spline = spline_columns(n, knot_samples(p.knot_spacing_s, dt));
  m.nb = m.spline.size();
  m.nvar = n + m.nb + 2;

  std::vector<Triplet> g;
  g.reserve(3 * n + 4 * n + 2 * n);
  std::vector<Triplet> a;
  a.reserve(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<int>(i);
    g.emplace_back(r, r, 1.0);
    a.emplace_back(r, r, m.ar.ar0);
    if (i >= 1) {
      g.emplace_back(r, r - 1, 2.0);
      a.emplace_back(r, r - 1, m.ar.ar1);
    }
    if (i >= 2) {
      g.emplace_back(r, r - 2, 1.0);
      a.emplace_back(r, r - 2, m.ar.ar2);
    }
  }
  for (std::size_t j = 0; j < m.nb; ++j) {
    const SplineColumn& c = m.spline[j];
    for (std::size_t k = 0; k < c.values.size(); ++k) {
      g.emplace_back(static_cast<int>(c.start + k), static_cast<int>(n + j), c.values[k]);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    g.emplace_back(static_cast<int>(i), static_cast<int>(n + m.nb), 1.0);
    g.emplace_back(static_cast<int>(i), static_cast<int>(n + m.nb + 1),
                   static_cast<double>(i + 1) / static_cast<double>(n));
  }
  m.G.resize(static_cast<int>(n), static_cast<int>(m.nvar));
  m.G.setFromTriplets(g.begin(), g.end());
  m.A.resize(static_cast<int>(n), static_cast<int>(n));
  m.A.setFromTriplets(a.begin(), a.end());
  return m;
}

std::vector<double> tonic_from(const Model& m, std::span<const double> l, std::span<const double> d) {
  std::vector<double> t(m.n);
  for (std::size_t i = 0; i < m.n; ++i) {
    t[i] = d[0] + d[1] * static_cast<double>(i + 1) / static_cast<double>(m.n);
  }
  for (std::size_t j = 0; j < m.nb; ++j) {
    const SplineColumn& c = m.spline[j];
    for (std::size_t k = 0; k < c.values.size(); ++k) t[c.start + k] += l[j] * c.values[k];
  }
  return t;
}

double standardizing_scale(std::span<const double> y) {
  const double mu = mean_of(y);
  double var = 0.0;
  for (double v : y) var += (v - mu) * (v - mu);
  var /= static_cast<double>(y.size());
  if (var > 1e-24) return std::sqrt(var);
  return std::abs(mu) > 0.0 ? std::abs(mu) : 1.0;
}

// Natural residual of the KKT conditions in driver space.
double kkt_residual(const Model& m, std::span<const double> y, std::span<const double> p,
                    std::span<const double> phasic, std::span<const double> l,
                    std::span<const double> d, double alpha, double gamma) {
  const std::vector<double> tonic = tonic_from(m, l, d);
  std::vector<double> res(m.n);
  for (std::size_t i = 0; i < m.n; ++i) res[i] = phasic[i] + tonic[i] - y[i];
  const std::vector<double> gp = bateman_adjoint(res, m.ar);
  double worst = 0.0;
  for (std::size_t i = 0; i < m.n; ++i) worst = std::max(worst, std::abs(std::min(p[i], gp[i] + alpha)));
  for (std::size_t j = 0; j < m.nb; ++j) {
    const SplineColumn& c = m.spline[j];
    double s = gamma * l[j];
    for (std::size_t k = 0; k < c.values.size(); ++k) s += c.values[k] * res[c.start + k];
    worst = std::max(worst, std::abs(s));
  }
  double s0 = 0.0, s1 = 0.0;
  for (std::size_t i = 0; i < m.n; ++i) {
    s0 += res[i];
    s1 += res[i] * static_cast<double>(i + 1) / static_cast<double>(m.n);
  }
  return std::max({worst, std::abs(s0), std::abs(s1)});
}

// Response of the driver-to-phasic ARMA filter.
std::vector<double> arma_response(std::span<const double> p, const Arma& ar) {
  const std::size_t n = p.size();
  std::vector<double> q(n), r(n);
  for (std::size_t i = 0; i < n; ++i) {
    double v = p[i];
    if (i >= 1) v -= ar.ar1 * q[i - 1];
    if (i >= 2) v -= ar.ar2 * q[i - 2];
    q[i] = v / ar.ar0;
    r[i] = q[i] + (i >= 1 ? 2.0 * q[i - 1] : 0.0) + (i >= 2 ? q[i - 2] : 0.0);
  }
  return r;
}

// Exact least-squares solve on the driver support found by the interior
// point. In driver coordinates the problem restricted to a support is an
// unconstrained, sparse, positive definite system, free of the barrier
// conditioning that limits the last interior-point iterates. The support is
// updated primal-dual style until it stops changing. Returns an empty vector
// when the support is too dense or the factorization fails.
Vec active_set_polish(const Model& m, const Vec& y, double alpha, double gamma, const Vec& s, const Vec& z) {
  const std::size_t n = m.n;
  const int nb = static_cast<int>(m.nb);
  constexpr std::size_t kMaxSupport = 4000;

  std::vector<double> impulse(n, 0.0);
  impulse[0] = 1.0;
  std::vector<double> h = arma_response(impulse, m.ar);
  const double hmax = std::abs(*std::max_element(h.begin(), h.end(), [](double a, double b) { return std::abs(a) < std::abs(b); }));
  std::size_t hlen = h.size();
  while (hlen > 1 && std::abs(h[hlen - 1]) < 1e-18 * hmax) --hlen;
  h.resize(hlen);

  std::vector<char> support(n);
  for (std::size_t i = 0; i < n; ++i) support[i] = s[static_cast<int>(i)] > z[static_cast<int>(i)];

  std::vector<double> p(n, 0.0), l(m.nb, 0.0), d(2, 0.0);
  for (int round = 0; round < 20; ++round) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) {
      if (support[i]) idx.push_back(i);
    }
    if (idx.size() > kMaxSupport) return {};
    const int ns = static_cast<int>(idx.size());
    const int nv = ns + nb + 2;
    std::vector<Triplet> trip;
    for (int k = 0; k < ns; ++k) {
      const std::size_t i0 = idx[static_cast<std::size_t>(k)];
      for (std::size_t t = 0; t < hlen && i0 + t < n; ++t) trip.emplace_back(static_cast<int>(i0 + t), k, h[t]);
    }
    for (int j = 0; j < nb; ++j) {
      const SplineColumn& col = m.spline[static_cast<std::size_t>(j)];
      for (std::size_t t = 0; t < col.values.size(); ++t) {
        trip.emplace_back(static_cast<int>(col.start + t), ns + j, col.values[t]);
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      trip.emplace_back(static_cast<int>(i), ns + nb, 1.0);
      trip.emplace_back(static_cast<int>(i), ns + nb + 1, static_cast<double>(i + 1) / static_cast<double>(n));
    }
    SpMat Phi(static_cast<int>(n), nv);
    Phi.setFromTriplets(trip.begin(), trip.end());
    const SpMat PhiT = Phi.transpose();
    SpMat Nm = PhiT * Phi;
    for (int j = 0; j < nb; ++j) Nm.coeffRef(ns + j, ns + j) += gamma;
    Nm.makeCompressed();
    Vec rhs = PhiT * y;
    for (int k = 0; k < ns; ++k) rhs[k] -= alpha;
    Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> f(Nm);
    if (f.info() != Eigen::Success) return {};
    Vec v = f.solve(rhs);
    for (int r = 0; r < 2; ++r) v += f.solve(rhs - Nm.selfadjointView<Eigen::Lower>() * v);
    if (!v.allFinite()) return {};

    std::fill(p.begin(), p.end(), 0.0);
    for (int k = 0; k < ns; ++k) p[idx[static_cast<std::size_t>(k)]] = v[k];
    for (int j = 0; j < nb; ++j) l[static_cast<std::size_t>(j)] = v[ns + j];
    d[0] = v[ns + nb];
    d[1] = v[ns + nb + 1];

    const std::vector<double> ph = arma_response(p, m.ar);
    const std::vector<double> tonic = tonic_from(m, l, d);
    std::vector<double> res(n);
    for (std::size_t i = 0; i < n; ++i) res[i] = ph[i] + tonic[i] - y[static_cast<int>(i)];
    const std::vector<double> g = bateman_adjoint(res, m.ar);
    double pmax = 0.0, gmax = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      pmax = std::max(pmax, std::abs(p[i]));
      gmax = std::max(gmax, std::abs(g[i] + alpha));
    }
    const double tol_p = 1e-13 * (1.0 + pmax);
    const double tol_g = 1e-13 * (1.0 + gmax);
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      if (support[i] && p[i] < -tol_p) {
        support[i] = false;
        changed = true;
      } else if (!support[i] && g[i] + alpha < -tol_g) {
        support[i] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }

  // Back to solver coordinates: q solves A q = p.
  Vec x = Vec::Zero(static_cast<int>(m.nvar));
  for (std::size_t i = 0; i < n; ++i) {
    double v = p[i];
    if (i >= 1) v -= m.ar.ar1 * x[static_cast<int>(i - 1)];
    if (i >= 2) v -= m.ar.ar2 * x[static_cast<int>(i - 2)];
    x[static_cast<int>(i)] = v / m.ar.ar0;
  }
  for (int j = 0; j < nb; ++j) x[static_cast<int>(n) + j] = l[static_cast<std::size_t>(j)];
  x[static_cast<int>(m.nvar) - 2] = d[0];
  x[static_cast<int>(m.nvar) - 1] = d[1];
  return x;
}

}  // namespace

std::vector<double> bateman_response(std::span<const double> driver, double dt_s, double tau0_s,
                                     double tau1_s) {
  const Arma ar = bateman_arma(dt_s, tau0_s, tau1_s);
  const std::size_t n = driver.size();
  std::vector<double> q(n), r(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = driver[i];
    if (i >= 1) s -= ar.ar1 * q[i - 1];
    if (i >= 2) s -= ar.ar2 * q[i - 2];
    q[i] = s / ar.ar0;
    r[i] = q[i] + (i >= 1 ? 2.0 * q[i - 1] : 0.0) + (i >= 2 ? q[i - 2] : 0.0);
  }
  return r;
}

std::vector<std::vector<double>> spline_basis(std::size_t n, std::size_t knot_spacing) {
  std::vector<std::vector<double>> out;
  for (const SplineColumn& c : spline_columns(n, knot_spacing)) {
    std::vector<double> col(n, 0.0);
    std::copy(c.values.begin(), c.values.end(), col.begin() + static_cast<std::ptrdiff_t>(c.start));
    out.push_back(std::move(col));
  }
  return out;
}

double cvxeda_objective(std::span<const double> y, double dt_s, std::span<const double> driver,
                        std::span<const double> spline_coefs, std::span<const double> drift_coefs,
                        const CvxEdaParams& params) {
  const std::size_t n = y.size();
  const std::vector<double> phasic = bateman_response(driver, dt_s, params.tau0_s, params.tau1_s);
  const auto cols = spline_columns(n, knot_samples(params.knot_spacing_s, dt_s));
  if (cols.size() != spline_coefs.size() || drift_coefs.size() != 2 || driver.size() != n) {
    throw Error(ErrorKind::kShape, "cvxEDA objective: coefficient sizes do not match the input");
  }
  std::vector<double> fit(n);
  for (std::size_t i = 0; i < n; ++i) {
    fit[i] = phasic[i] + drift_coefs[0] + drift_coefs[1] * static_cast<double>(i + 1) / static_cast<double>(n);
  }
  double ridge = 0.0;
  for (std::size_t j = 0; j < cols.size(); ++j) {
    for (std::size_t k = 0; k < cols[j].values.size(); ++k) {
      fit[cols[j].start + k] += spline_coefs[j] * cols[j].values[k];
    }
    ridge += spline_coefs[j] * spline_coefs[j];
  }
  double rss = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    rss += (fit[i] - y[i]) * (fit[i] - y[i]);
    l1 += driver[i];
  }
  return 0.5 * rss + params.alpha * l1 + 0.5 * params.gamma * ridge;
}

CvxEdaSolution cvxeda_solve(std::span<const double> y_in, double dt_s, const CvxEdaParams& params) {
  check_params(params);
  const std::size_t n = y_in.size();
  if (n < 8) throw Error(ErrorKind::kSignalTooShort, "cvxEDA input is too short");

  // Solve on the standardized scale; the problem is positively homogeneous
  // once alpha is divided by the same factor.
  const double scale = standardizing_scale(y_in);
  Vec y(static_cast<int>(n));
  for (std::size_t i = 0; i < n; ++i) y[static_cast<int>(i)] = y_in[i] / scale;
  const double alpha = params.alpha / scale;
  const double gamma = params.gamma;

  const Model m = build_model(n, dt_s, params);
  const int N = static_cast<int>(m.nvar);
  const int nq = static_cast<int>(n);

  SpMat H = SpMat(m.G.transpose()) * m.G;
  for (std::size_t j = 0; j < m.nb; ++j) {
    H.coeffRef(static_cast<int>(n + j), static_cast<int>(n + j)) += gamma;
  }
  // Make sure the band touched by A^T W A is structurally present.
  for (int i = 0; i < nq; ++i) {
    for (int k = 0; k <= 2 && i + k < nq; ++k) {
      H.coeffRef(i + k, i) += 0.0;
      H.coeffRef(i, i + k) += 0.0;
    }
  }
  H.makeCompressed();

  Vec c = -(SpMat(m.G.transpose()) * y);
  {
    Vec ones = Vec::Ones(nq);
    Vec at1 = SpMat(m.A.transpose()) * ones;
    c.head(nq) += alpha * at1;
  }
  const double yy = 0.5 * y.squaredNorm();

  const Arma ar = m.ar;
  auto apply_e = [&](const Vec& x) -> Vec { return m.A * x.head(nq); };
  auto apply_et = [&](const Vec& z) -> Vec {
    Vec out = Vec::Zero(N);
    out.head(nq) = SpMat(m.A.transpose()) * z;
    return out;
  };

  Vec x = Vec::Zero(N);
  Vec s = Vec::Ones(nq);
  Vec z = Vec::Ones(nq);

  Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
  SpMat K = H;
  ldlt.analyzePattern(K);

  auto assemble = [&](const Vec& w) {
    K = H;
    for (int j = 0; j < nq; ++j) {
      const double w0 = w[j];
      const double w1 = j + 1 < nq ? w[j + 1] : 0.0;
      const double w2 = j + 2 < nq ? w[j + 2] : 0.0;
      K.coeffRef(j, j) += ar.ar0 * ar.ar0 * w0 + ar.ar1 * ar.ar1 * w1 + ar.ar2 * ar.ar2 * w2;
      if (j + 1 < nq) K.coeffRef(j + 1, j) += ar.ar1 * ar.ar0 * w1 + ar.ar2 * ar.ar1 * w2;
      if (j + 2 < nq) K.coeffRef(j + 2, j) += ar.ar2 * ar.ar0 * w2;
    }
    ldlt.factorize(K);
    if (ldlt.info() != Eigen::Success) return false;
    return true;
  };
  auto solve = [&](const Vec& rhs) -> Vec {
    Vec sol = ldlt.solve(rhs);
    // One step of iterative refinement against the symmetric matrix.
    Vec r = rhs - K.selfadjointView<Eigen::Lower>() * sol;
    sol += ldlt.solve(r);
    return sol;
  };

  auto step_to_boundary = [](const Vec& v, const Vec& dv) {
    double a = 1.0;
    for (int i = 0; i < v.size(); ++i) {
      if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
    }
    return a;
  };

  auto kkt_at = [&](const Vec& xv) {
    const Vec pv = apply_e(xv);
    std::vector<double> drv(n), lv(m.nb), dv(2);
    for (std::size_t i = 0; i < n; ++i) drv[i] = std::max(0.0, pv[static_cast<int>(i)]);
    for (std::size_t j = 0; j < m.nb; ++j) lv[j] = xv[static_cast<int>(n + j)];
    dv[0] = xv[N - 2];
    dv[1] = xv[N - 1];
    const std::vector<double> ph = bateman_response(drv, dt_s, params.tau0_s, params.tau1_s);
    return kkt_residual(m, std::span<const double>(y.data(), n), drv, ph, lv, dv, alpha, gamma);
  };

  SolverReport report;
  int polish_steps = 0;
  double best_kkt = std::numeric_limits<double>::infinity();
  double best_gap = 0.0, best_rel_gap = 0.0;
  Vec best_x, best_s, best_z;
  double gap = 0.0, rel_gap = 0.0;
  int it = 0;
  for (; it < params.max_iterations; ++it) {
    const Vec Hx = H.selfadjointView<Eigen::Lower>() * x;
    const Vec rd = Hx + c - apply_et(z);
    const Vec ex = apply_e(x);
    const Vec rp = ex - s;
    gap = s.dot(z);
    const double mu = gap / nq;
    const double obj = 0.5 * x.dot(Hx) + c.dot(x) + yy;
    rel_gap = gap / std::max(1.0, std::abs(obj));
    const double pres = rp.lpNorm<Eigen::Infinity>() / (1.0 + ex.lpNorm<Eigen::Infinity>());
    const double dres = rd.lpNorm<Eigen::Infinity>() / (1.0 + c.lpNorm<Eigen::Infinity>());
    if (rel_gap < params.tolerance) {
      // Near the optimum the barrier system becomes ill-conditioned, so the
      // last iterate is not always the most accurate one.
      const double kkt = kkt_at(x);
      if (kkt < best_kkt) {
        best_kkt = kkt;
        best_x = x;
        best_s = s;
        best_z = z;
        best_gap = gap;
        best_rel_gap = rel_gap;
        report.objective = obj;
      }
      const bool base = pres < 1e-10 && dres < 1e-10 && mu < 1e-14;
      if (kkt < 1e-10 || (base && ++polish_steps > 8)) break;
    }

    const Vec w = z.cwiseQuotient(s);
    if (!assemble(w)) break;

    // Affine-scaling predictor.
    auto direction = [&](const Vec& rc) {
      // rc is the complementarity target residual: s.*z - sigma*mu (+ corrector).
      const Vec tmp = (-rc - z.cwiseProduct(rp)).cwiseQuotient(s);
      const Vec rhs = -rd + apply_et(tmp);
      const Vec dx = solve(rhs);
      const Vec ds = apply_e(dx) + rp;
      const Vec dz = (-rc - z.cwiseProduct(ds)).cwiseQuotient(s);
      return std::tuple<Vec, Vec, Vec>(dx, ds, dz);
    };
    const Vec sz = s.cwiseProduct(z);
    auto [dx_a, ds_a, dz_a] = direction(sz);
    const double ap = step_to_boundary(s, ds_a);
    const double ad = step_to_boundary(z, dz_a);
    const double mu_aff = (s + ap * ds_a).dot(z + ad * dz_a) / nq;
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    const Vec rc = sz + ds_a.cwiseProduct(dz_a) - Vec::Constant(nq, sigma * mu);
    auto [dx, ds, dz] = direction(rc);
    const double eta = 0.995;
    const double step_p = std::min(1.0, eta * step_to_boundary(s, ds));
    const double step_d = std::min(1.0, eta * step_to_boundary(z, dz));
    x += step_p * dx;
    s += step_p * ds;
    z += step_d * dz;
  }
  if (best_x.size() == 0) {
    throw ConvergenceError("cvxEDA interior point did not converge", it, gap * scale * scale);
  }
  x = best_x;
  gap = best_gap;
  rel_gap = best_rel_gap;
  if (best_kkt > 1e-10) {
    Vec polished = active_set_polish(m, y, alpha, gamma, best_s, best_z);
    if (polished.size() == N) {
      const double kkt = kkt_at(polished);
      if (kkt < best_kkt) {
        x = polished;
        const Vec Hx = H.selfadjointView<Eigen::Lower>() * x;
        report.objective = 0.5 * x.dot(Hx) + c.dot(x) + yy;
      }
    }
  }

  CvxEdaSolution sol;
  sol.dt_s = dt_s;
  const Vec p = apply_e(x);
  std::vector<double> driver(n), l(m.nb), d(2);
  for (std::size_t i = 0; i < n; ++i) driver[i] = std::max(0.0, p[static_cast<int>(i)]);
  for (std::size_t j = 0; j < m.nb; ++j) l[j] = x[static_cast<int>(n + j)];
  d[0] = x[N - 2];
  d[1] = x[N - 1];
  const std::vector<double> phasic = bateman_response(driver, dt_s, params.tau0_s, params.tau1_s);
  std::vector<double> ys(y.data(), y.data() + n);
  report.iterations = it;
  report.duality_gap = gap * scale * scale;
  report.relative_gap = rel_gap;
  report.objective *= scale * scale;
  report.kkt_residual = kkt_residual(m, ys, driver, phasic, l, d, alpha, gamma);

  const std::vector<double> tonic = tonic_from(m, l, d);
  sol.input.assign(y_in.begin(), y_in.end());
  sol.tonic.resize(n);
  sol.phasic.resize(n);
  sol.driver.resize(n);
  sol.residual.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    sol.tonic[i] = tonic[i] * scale;
    sol.driver[i] = driver[i] * scale;
    sol.phasic[i] = phasic[i] * scale;
    sol.residual[i] = sol.input[i] - sol.tonic[i] - sol.phasic[i];
  }
  for (double v : l) sol.spline_coefs.push_back(v * scale);
  for (double v : d) sol.drift_coefs.push_back(v * scale);
  sol.report = report;
  return sol;
}

EdaDecomposition cvxeda_decompose(const SignalTrace& eda, const CvxEdaParams& params) {
  check_params(params);
  if (eda.duration_s() < 30.0) {
    throw Error(ErrorKind::kSignalTooShort, "cvxEDA needs at least 30 s of EDA");
  }
  const double fs = eda.sample_rate_hz();
  const auto factor = static_cast<std::size_t>(std::ceil(fs / params.solver_rate_hz - 1e-9));
  const SignalTrace grid = factor > 1 ? downsample(eda, fs / static_cast<double>(factor)) : eda;

  CvxEdaSolution sol = cvxeda_solve(grid.samples(), 1.0 / grid.sample_rate_hz(), params);

  const std::size_t n = eda.size();
  const std::size_t m = sol.tonic.size();
  auto upsample = [&](const std::vector<double>& v) {
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t k = j / factor;
      if (k + 1 >= m) {
        out[j] = v[std::min(k, m - 1)];
        continue;
      }
      const double frac = static_cast<double>(j % factor) / static_cast<double>(factor);
      out[j] = v[k] + frac * (v[k + 1] - v[k]);
    }
    return out;
  };
  std::vector<double> tonic = upsample(sol.tonic);
  std::vector<double> phasic = upsample(sol.phasic);
  std::vector<double> residual(n);
  const auto x = eda.samples();
  for (std::size_t j = 0; j < n; ++j) residual[j] = x[j] - tonic[j] - phasic[j];

  EdaDecomposition out{
      SignalTrace(std::move(tonic), fs, eda.start_time_s(), eda.label()),
      SignalTrace(std::move(phasic), fs, eda.start_time_s(), eda.label()),
      SignalTrace(std::move(residual), fs, eda.start_time_s(), eda.label()),
      SignalTrace(sol.driver, grid.sample_rate_hz(), eda.start_time_s(), eda.label()),
      std::move(sol)};
  return out;
}

std::vector<ScrEvent> extract_scr_events(const EdaDecomposition& decomp, double min_amplitude_us) {
  const auto r = decomp.phasic.samples();
  std::vector<ScrEvent> events;
  for (std::size_t i = 1; i + 1 < r.size(); ++i) {
    if (!(r[i] > r[i - 1] && r[i] >= r[i + 1])) continue;
    std::size_t j = i;
    while (j > 0 && r[j - 1] < r[j]) --j;
    const double amp = r[i] - r[j];
    if (amp < min_amplitude_us) continue;
    ScrEvent e;
    e.onset_time_s = decomp.phasic.time_at(j);
    e.peak_time_s = decomp.phasic.time_at(i);
    e.amplitude_us = amp;
    e.rise_time_s = e.peak_time_s - e.onset_time_s;
    events.push_back(e);
  }
  return events;
}

EdaFeatures eda_features(const EdaDecomposition& decomp, const std::vector<ScrEvent>& events,
                         const TimeInterval& window) {
  EdaFeatures f;
  const auto tonic = decomp.tonic.window(window);
  if (!tonic.empty()) f.scl_mean_us = mean_of(tonic);
  if (tonic.size() >= 2) f.scl_slope_us_per_s = linear_slope(tonic, 1.0 / decomp.tonic.sample_rate_hz());

  int count = 0;
  double amp = 0.0, rise = 0.0;
  for (const ScrEvent& e : events) {
    if (!window.contains(e.peak_time_s)) continue;
    ++count;
    amp += e.amplitude_us;
    rise += e.rise_time_s;
  }
  f.scr_frequency_per_min = count / (window.duration() / 60.0);
  if (count > 0) {
    f.scr_amplitude_us = amp / count;
    f.scr_rise_time_s = rise / count;
  }
  return f;
}

}  // namespace stressor
