#include "carl/tabular.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace carl::bounds {

namespace {

void check_rows_stochastic(const MatD& m, const char* what, double tol) {
  for (int i = 0; i < m.rows(); ++i) {
    if (std::abs(m.row(i).sum() - 1.0) > tol || (m.row(i).array() < -tol).any())
      throw InputError(std::string(what) + " row " + std::to_string(i) + " is not stochastic");
  }
}

}  // namespace

void TabularMDP::validate(double tol) const {
  if (int(P.size()) != na) throw InputError("P must have one kernel per action");
  for (const auto& pa : P) check_rows_stochastic(pa, "P", tol);
  if (r.rows() != nx || r.cols() != na) throw InputError("r shape mismatch");
  if (r.cwiseAbs().maxCoeff() > r_max + 1e-12) throw InputError("|r| exceeds r_max");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InputError("gamma must be in (0,1)");
}

void TabularLCE::validate(double tol) const {
  check_rows_stochastic(E, "E", tol);
  for (const auto& fa : F) check_rows_stochastic(fa, "F", tol);
  check_rows_stochastic(D, "D", tol);
}

MatD policy_image(const MatD& E, const TabularPolicy& pi) { return E * pi; }

MatD induced_kernel(const std::vector<MatD>& P, const TabularPolicy& policy) {
  const int n = int(P[0].rows());
  MatD out = MatD::Zero(n, P[0].cols());
  for (size_t a = 0; a < P.size(); ++a)
    out += policy.col(int(a)).asDiagonal() * P[a];
  return out;
}

VecD induced_reward(const MatD& r, const TabularPolicy& policy) {
  return (policy.cwiseProduct(r)).rowwise().sum();
}

namespace {
VecD solve_fixed_point(const MatD& kernel, const VecD& reward, double gamma) {
  if (!(gamma < 1.0)) throw InputError("fixed-point solve requires gamma < 1");
  const int n = int(kernel.rows());
  MatD A = MatD::Identity(n, n) - gamma * kernel;
  return A.partialPivLu().solve(reward);
}
}  // namespace

VecD exact_U(const TabularMDP& mdp, const TabularPolicy& mu) {
  return solve_fixed_point(induced_kernel(mdp.P, mu), induced_reward(mdp.r, mu), mdp.gamma);
}

VecD exact_V(const TabularLCE& lce, const TabularPolicy& pi, double gamma) {
  return solve_fixed_point(induced_kernel(lce.F, pi), induced_reward(lce.r_bar, pi), gamma);
}

MatD latent_q(const TabularLCE& lce, const VecD& v, double gamma) {
  const int nz = lce.nz, na = int(lce.F.size());
  MatD q(nz, na);
  for (int a = 0; a < na; ++a) q.col(a) = lce.r_bar.col(a) + gamma * (lce.F[a] * v);
  return q;
}

TabularPolicy latent_greedy(const TabularLCE& lce, const VecD& v, double gamma) {
  MatD q = latent_q(lce, v, gamma);
  TabularPolicy pi = TabularPolicy::Zero(q.rows(), q.cols());
  for (int z = 0; z < q.rows(); ++z) {
    int best = 0;
    for (int a = 1; a < q.cols(); ++a)
      if (q(z, a) > q(z, best)) best = a;
    pi(z, best) = 1.0;
  }
  return pi;
}

double kl_discrete(const VecD& p, const VecD& q) {
  double kl = 0.0;
  for (int i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) return kInf;
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(kl, 0.0);
}

namespace {

struct DeltaParts {
  const TabularMDP& mdp;
  const TabularLCE& lce;
  const TabularPolicy& pi;
  MatD pe;    // (pi o E)(x,a)
  MatD f_pi;  // F_pi(z,z')
  MatD p_pe;  // P_{pi o E}(x,x')

  DeltaParts(const TabularMDP& m, const TabularLCE& l, const TabularPolicy& p)
      : mdp(m), lce(l), pi(p) {
    pe = policy_image(l.E, p);
    f_pi = induced_kernel(l.F, p);
    p_pe = induced_kernel(m.P, pe);
  }

  double term1(int x) const {
    double s = 0.0;
    for (int z = 0; z < lce.nz; ++z) {
      double e = lce.E(x, z);
      if (e <= 0.0) continue;
      double d = lce.D(z, x);
      if (d <= 0.0) return kInf;
      s += e * std::log(d);
    }
    double inner = std::max(0.0, -0.5 * s);
    return mdp.r_max / (1.0 - mdp.gamma) * std::sqrt(inner);
  }

  double term2(int x) const {
    double mismatch = 0.0;
    for (int z = 0; z < lce.nz; ++z)
      for (int a = 0; a < mdp.na; ++a)
        mismatch += lce.E(x, z) * pi(z, a) * (mdp.r(x, a) - lce.r_bar(z, a));
    return 2.0 * std::abs(mismatch);
  }

  double term3(int x) const {
    // prediction path D o F_pi o E vs observation kernel
    VecD dfe = VecD::Zero(mdp.nx);
    for (int z = 0; z < lce.nz; ++z) {
      if (lce.E(x, z) <= 0.0) continue;
      dfe += lce.E(x, z) * (lce.D.transpose() * f_pi.row(z).transpose());
    }
    return std::sqrt(kl_discrete(p_pe.row(x).transpose(), dfe));
  }

  // marginal consistency: (E o P_pe)(.|x) vs (F_pi o E)(.|x)
  double term4_marginal(int x) const {
    VecD ep = lce.E.transpose() * p_pe.row(x).transpose();
    VecD fe = f_pi.transpose() * lce.E.row(x).transpose();
    return std::sqrt(kl_discrete(ep, fe));
  }

  // conditional consistency: sqrt( sum_x' P_pe(x'|x) KL(E(.|x') || (F_pi o E)(.|x)) )
  double term4_conditional(int x) const {
    VecD fe = f_pi.transpose() * lce.E.row(x).transpose();
    double s = 0.0;
    for (int xn = 0; xn < mdp.nx; ++xn) {
      double w = p_pe(x, xn);
      if (w <= 0.0) continue;
      double kl = kl_discrete(lce.E.row(xn).transpose(), fe);
      if (kl == kInf) return kInf;
      s += w * kl;
    }
    return std::sqrt(s);
  }
};

DeltaBreakdown assemble(const TabularMDP& mdp, const DeltaParts& parts, bool conditional) {
  DeltaBreakdown out;
  const int nx = mdp.nx;
  out.total.resize(nx);
  out.term1.resize(nx);
  out.term2.resize(nx);
  out.term3.resize(nx);
  out.term4.resize(nx);
  const double c = mdp.gamma * mdp.r_max / (std::sqrt(2.0) * (1.0 - mdp.gamma));
  for (int x = 0; x < nx; ++x) {
    out.term1[x] = parts.term1(x);
    out.term2[x] = parts.term2(x);
    out.term3[x] = parts.term3(x);
    out.term4[x] = conditional ? parts.term4_conditional(x) : parts.term4_marginal(x);
    out.total[x] = out.term1[x] + out.term2[x] + c * (out.term3[x] + out.term4[x]);
  }
  return out;
}

}  // namespace

DeltaBreakdown delta_term(const TabularMDP& mdp, const TabularLCE& lce, const TabularPolicy& pi) {
  return assemble(mdp, DeltaParts(mdp, lce, pi), /*conditional=*/false);
}

DeltaBreakdown delta_term_residual(const TabularMDP& mdp, const TabularLCE& lce,
                                   const TabularPolicy& pi) {
  return assemble(mdp, DeltaParts(mdp, lce, pi), /*conditional=*/true);
}

MatD delta_action(const TabularMDP& mdp, const TabularLCE& lce) {
  const int nx = mdp.nx, na = mdp.na, nz = lce.nz;
  const double c = mdp.gamma * mdp.r_max / (std::sqrt(2.0) * (1.0 - mdp.gamma));
  MatD out(nx, na);
  for (int x = 0; x < nx; ++x) {
    double t1 = 0.0;
    {
      double s = 0.0;
      bool inf = false;
      for (int z = 0; z < nz; ++z) {
        double e = lce.E(x, z);
        if (e <= 0.0) continue;
        if (lce.D(z, x) <= 0.0) {
          inf = true;
          break;
        }
        s += e * std::log(lce.D(z, x));
      }
      t1 = inf ? kInf : mdp.r_max / (1.0 - mdp.gamma) * std::sqrt(std::max(0.0, -0.5 * s));
    }
    for (int a = 0; a < na; ++a) {
      double rbar_enc = lce.E.row(x).dot(lce.r_bar.col(a));
      double t2 = 2.0 * std::abs(mdp.r(x, a) - rbar_enc);

      VecD dfe = VecD::Zero(nx);
      for (int z = 0; z < nz; ++z) {
        if (lce.E(x, z) <= 0.0) continue;
        dfe += lce.E(x, z) * (lce.D.transpose() * lce.F[a].row(z).transpose());
      }
      double t3 = std::sqrt(kl_discrete(mdp.P[a].row(x).transpose(), dfe));

      double inner = 0.0;
      bool inf4 = false;
      for (int z = 0; z < nz && !inf4; ++z) {
        double e = lce.E(x, z);
        if (e <= 0.0) continue;
        for (int xn = 0; xn < nx; ++xn) {
          double w = mdp.P[a](x, xn);
          if (w <= 0.0) continue;
          double kl = kl_discrete(lce.E.row(xn).transpose(), lce.F[a].row(z).transpose());
          if (kl == kInf) {
            inf4 = true;
            break;
          }
          inner += e * w * kl;
        }
      }
      double t4 = inf4 ? kInf : std::sqrt(inner);
      out(x, a) = t1 + t2 + c * (t3 + t4);
    }
  }
  return out;
}

namespace {
// Dirichlet-style row with a uniform floor so supports stay full.
VecD simplex_row(int n, Rng& rng, double floor_mix = 0.05) {
  VecD v(n);
  for (int i = 0; i < n; ++i) v[i] = -std::log(std::max(rng.uniform(), 1e-300));
  v /= v.sum();
  return (1.0 - floor_mix) * v + floor_mix * VecD::Constant(n, 1.0 / n);
}

MatD simplex_rows(int rows, int cols, Rng& rng, double floor_mix = 0.05) {
  MatD m(rows, cols);
  for (int i = 0; i < rows; ++i) m.row(i) = simplex_row(cols, rng, floor_mix).transpose();
  return m;
}
}  // namespace

Instance random_instance(std::uint64_t seed, int nx, int nz, int na, double gamma,
                         RewardCompat compat) {
  if (nx < 1 || nz < 1 || na < 1) throw InputError("instance sizes must be >= 1");
  Rng rng = Rng::substream(seed, "tabular-instance");
  Instance inst;
  inst.mdp.nx = nx;
  inst.mdp.na = na;
  inst.mdp.gamma = gamma;
  inst.mdp.r_max = 1.0;
  for (int a = 0; a < na; ++a) inst.mdp.P.push_back(simplex_rows(nx, nx, rng));

  inst.lce.nz = nz;
  for (int a = 0; a < na; ++a) inst.lce.F.push_back(simplex_rows(nz, nz, rng));
  inst.lce.D = simplex_rows(nz, nx, rng);

  MatD r_bar(nz, na);
  for (int z = 0; z < nz; ++z)
    for (int a = 0; a < na; ++a) r_bar(z, a) = rng.uniform(-1.0, 1.0);
  inst.lce.r_bar = r_bar;

  if (compat == RewardCompat::kExactReward) {
    // Deterministic encoder: x -> zeta(x); first nz states cover every z.
    inst.lce.E = MatD::Zero(nx, nz);
    std::vector<int> zeta(nx);
    for (int x = 0; x < nx; ++x) zeta[x] = (x < nz) ? x : int(rng.index(nz));
    for (int x = 0; x < nx; ++x) inst.lce.E(x, zeta[x]) = 1.0;
    inst.mdp.r.resize(nx, na);
    for (int x = 0; x < nx; ++x) inst.mdp.r.row(x) = r_bar.row(zeta[x]);
  } else {
    inst.lce.E = simplex_rows(nx, nz, rng);
    inst.mdp.r.resize(nx, na);
    for (int x = 0; x < nx; ++x)
      for (int a = 0; a < na; ++a) inst.mdp.r(x, a) = rng.uniform(-1.0, 1.0);
  }
  inst.mdp.validate();
  inst.lce.validate(1e-9);
  return inst;
}

TabularLCE identity_lce(const TabularMDP& mdp) {
  TabularLCE lce;
  lce.nz = mdp.nx;
  lce.E = MatD::Identity(mdp.nx, mdp.nx);
  lce.D = MatD::Identity(mdp.nx, mdp.nx);
  lce.F = mdp.P;
  lce.r_bar = mdp.r;
  return lce;
}

MatD perturb_rows(const MatD& rows, double eta, Rng& rng) {
  MatD noise = simplex_rows(int(rows.rows()), int(rows.cols()), rng);
  return (1.0 - eta) * rows + eta * noise;
}

TabularPolicy random_policy(int n_states, int na, Rng& rng) {
  return simplex_rows(n_states, na, rng);
}

TabularPolicy uniform_policy(int n_states, int na) {
  return TabularPolicy::Constant(n_states, na, 1.0 / na);
}

}  // namespace carl::bounds
