#include "carl/bound_checks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace carl::bounds {

namespace {

double distill_objective(const MatD& E, const MatD& mu, const TabularPolicy& pi) {
  double obj = 0.0;
  MatD q = policy_image(E, pi);
  for (int x = 0; x < mu.rows(); ++x) obj += kl_discrete(q.row(x).transpose(), mu.row(x).transpose());
  return obj;
}

void renormalize_rows(TabularPolicy& pi, double floor = 1e-300) {
  for (int z = 0; z < pi.rows(); ++z) {
    for (int a = 0; a < pi.cols(); ++a) pi(z, a) = std::max(pi(z, a), floor);
    pi.row(z) /= pi.row(z).sum();
  }
}

}  // namespace

TabularPolicy distill_policy(const MatD& E, const MatD& mu, int max_iters, double tol) {
  const int nz = int(E.cols()), na = int(mu.cols()), nx = int(E.rows());
  // init: encoder-weighted average of mu, the exact solution when E is
  // deterministic
  TabularPolicy pi = TabularPolicy::Zero(nz, na);
  for (int z = 0; z < nz; ++z) {
    VecD w = E.col(z);
    double tot = w.sum();
    if (tot <= 0.0) {
      pi.row(z).setConstant(1.0 / na);
      continue;
    }
    pi.row(z) = (w.transpose() * mu) / tot;
  }
  renormalize_rows(pi);

  double obj = distill_objective(E, mu, pi);
  double step = 0.5;
  for (int it = 0; it < max_iters; ++it) {
    MatD q = policy_image(E, pi);  // (nx x na)
    // dJ/dpi(z,a) = sum_x E(x,z) * (log(q(x,a)/mu(x,a)) + 1)
    MatD grad = MatD::Zero(nz, na);
    for (int x = 0; x < nx; ++x) {
      for (int a = 0; a < na; ++a) {
        double qa = std::max(q(x, a), 1e-300);
        double ma = std::max(mu(x, a), 1e-300);
        double g = std::log(qa / ma) + 1.0;
        for (int z = 0; z < nz; ++z) grad(z, a) += E(x, z) * g;
      }
    }
    // first-order optimality on each simplex row
    double kkt = 0.0;
    for (int z = 0; z < nz; ++z) {
      double avg = pi.row(z).dot(grad.row(z));
      for (int a = 0; a < na; ++a) kkt = std::max(kkt, pi(z, a) * std::abs(grad(z, a) - avg));
    }
    if (kkt < tol) break;

    TabularPolicy cand = pi.array() * (-step * grad).array().exp();
    renormalize_rows(cand);
    double cand_obj = distill_objective(E, mu, cand);
    if (cand_obj <= obj + 1e-15) {
      pi = cand;
      obj = cand_obj;
      step = std::min(step * 1.2, 4.0);
    } else {
      step *= 0.5;
      if (step < 1e-12) break;
    }
  }
  return pi;
}

BoundReport check_improvement(const TabularMDP& mdp, const TabularLCE& lce_new,
                              const TabularLCE& lce_old, const TabularPolicy& pi,
                              double tolerance) {
  BoundReport rep;
  rep.name = "improvement";
  try {
    mdp.validate(1e-9);
    lce_new.validate(1e-9);
    lce_old.validate(1e-9);
  } catch (const std::exception& e) {
    rep.valid = false;
    rep.note = e.what();
    return rep;
  }

  const double g = mdp.gamma;
  MatD mu = policy_image(lce_old.E, pi);
  TabularPolicy pi_d = distill_policy(lce_new.E, mu);
  VecD v_d = exact_V(lce_new, pi_d, g);
  TabularPolicy pi_plus = latent_greedy(lce_new, v_d, g);
  MatD mu_plus = policy_image(lce_new.E, pi_plus);

  VecD u_mu = exact_U(mdp, mu);
  VecD u_plus = exact_U(mdp, mu_plus);
  DeltaBreakdown d_cur = delta_term(mdp, lce_new, pi_d);
  DeltaBreakdown d_plus = delta_term(mdp, lce_new, pi_plus);

  MatD q_img = policy_image(lce_new.E, pi_d);
  rep.slacks.resize(mdp.nx);
  for (int x = 0; x < mdp.nx; ++x) {
    double kl = kl_discrete(q_img.row(x).transpose(), mu.row(x).transpose());
    double penalty = g / (1.0 - g) * (d_cur.total[x] + d_plus.total[x]) +
                     mdp.r_max / (1.0 - g) * kl;
    double slack = u_plus[x] - (u_mu[x] - penalty);
    rep.slacks[x] = std::isfinite(penalty) ? slack : kInf;
    rep.min_slack = std::min(rep.min_slack, rep.slacks[x]);
  }
  rep.pass = rep.min_slack >= -tolerance;
  return rep;
}

BoundReport check_policy_eval(const TabularMDP& mdp, const TabularLCE& lce,
                              const TabularPolicy& pi, double tolerance) {
  BoundReport rep;
  rep.name = "policy_eval";
  const double g = mdp.gamma;
  MatD mu = policy_image(lce.E, pi);
  VecD u = exact_U(mdp, mu);
  VecD v = exact_V(lce, pi, g);
  VecD ve = lce.E * v;

  DeltaBreakdown d = delta_term(mdp, lce, pi);
  DeltaBreakdown d_res = delta_term_residual(mdp, lce, pi);

  // Bellman backup of ve under mu
  MatD p_mu = induced_kernel(mdp.P, mu);
  VecD r_mu = induced_reward(mdp.r, mu);
  VecD t_ve = r_mu + g * (p_mu * ve);

  rep.slacks.resize(2 * mdp.nx);
  for (int x = 0; x < mdp.nx; ++x) {
    double s1 = g / (1.0 - g) * d.total[x] - std::abs(ve[x] - u[x]);
    double s2 = d_res.total[x] - std::abs(t_ve[x] - ve[x]);
    rep.slacks[2 * x] = std::isfinite(d.total[x]) ? s1 : kInf;
    rep.slacks[2 * x + 1] = std::isfinite(d_res.total[x]) ? s2 : kInf;
    rep.min_slack = std::min({rep.min_slack, rep.slacks[2 * x], rep.slacks[2 * x + 1]});
  }
  rep.pass = rep.min_slack >= -tolerance;
  return rep;
}

VecD mdp_optimal_value(const TabularMDP& mdp) {
  // exact policy iteration in the observation space
  TabularPolicy mu = uniform_policy(mdp.nx, mdp.na);
  for (int it = 0; it < 1000; ++it) {
    VecD u = exact_U(mdp, mu);
    TabularPolicy next = TabularPolicy::Zero(mdp.nx, mdp.na);
    for (int x = 0; x < mdp.nx; ++x) {
      int best = 0;
      double best_q = -kInf;
      for (int a = 0; a < mdp.na; ++a) {
        double q = mdp.r(x, a) + mdp.gamma * mdp.P[a].row(x).dot(u);
        if (q > best_q + 1e-15) {
          best_q = q;
          best = a;
        }
      }
      next(x, best) = 1.0;
    }
    if ((next - mu).cwiseAbs().maxCoeff() < 1e-15) break;
    mu = next;
  }
  return exact_U(mdp, mu);
}

OfflineResult check_offline(const TabularMDP& mdp, const TabularLCE& lce, int max_iters,
                            double tolerance) {
  OfflineResult out;
  out.report.name = "offline";
  const double g = mdp.gamma;

  MatD d_act = delta_action(mdp, lce);
  VecD d_max_per_x = d_act.rowwise().maxCoeff();
  double d_max = d_max_per_x.maxCoeff();

  TabularPolicy pi = uniform_policy(lce.nz, mdp.na);
  VecD u_prev = exact_U(mdp, policy_image(lce.E, pi));
  TabularPolicy pi_final = pi;
  for (int it = 0; it < max_iters; ++it) {
    VecD v = exact_V(lce, pi, g);
    TabularPolicy pi_next = latent_greedy(lce, v, g);
    VecD u_next = exact_U(mdp, policy_image(lce.E, pi_next));
    for (int x = 0; x < mdp.nx; ++x) {
      double allow = 2.0 * g / (1.0 - g) * d_max_per_x[x];
      double slack = std::isfinite(allow) ? u_next[x] - u_prev[x] + allow : kInf;
      out.report.slacks.push_back(slack);
      out.report.min_slack = std::min(out.report.min_slack, slack);
    }
    ++out.iterations;
    if ((pi_next - pi).cwiseAbs().maxCoeff() < 1e-15) {
      out.converged = true;
      pi_final = pi_next;
      u_prev = u_next;
      break;
    }
    pi = pi_next;
    pi_final = pi_next;
    u_prev = u_next;
  }

  // terminal limits: against the image of the latent-optimal policy, and the
  // stricter comparison against the MDP optimum
  VecD u_star_image = exact_U(mdp, policy_image(lce.E, pi_final));
  out.suboptimality_vs_latent_image = (u_prev - u_star_image).cwiseAbs().maxCoeff();
  VecD u_opt = mdp_optimal_value(mdp);
  out.suboptimality_vs_mdp_optimal = (u_opt - u_prev).cwiseAbs().maxCoeff();
  out.limit_bound = 2.0 * g / ((1.0 - g) * (1.0 - g)) * d_max;

  double term_slack1 = std::isfinite(out.limit_bound)
                           ? out.limit_bound - out.suboptimality_vs_latent_image
                           : kInf;
  double term_slack2 =
      std::isfinite(out.limit_bound) ? out.limit_bound - out.suboptimality_vs_mdp_optimal : kInf;
  out.report.slacks.push_back(term_slack1);
  out.report.slacks.push_back(term_slack2);
  out.report.min_slack = std::min({out.report.min_slack, term_slack1, term_slack2});
  if (!out.converged) {
    out.report.valid = false;
    out.report.note = "latent policy iteration did not converge";
  }
  out.report.pass = out.converged && out.report.min_slack >= -tolerance;
  return out;
}

SuiteResult run_bound_suite(const SuiteConfig& cfg) {
  SuiteResult res;
  for (int i = 0; i < cfg.instances; ++i) {
    std::uint64_t seed = cfg.seed0 + std::uint64_t(i);
    Rng rng = Rng::substream(seed, "bound-suite");
    int nx = 2 + int(rng.index(std::uint64_t(cfg.max_nx - 1)));
    int nz = 1 + int(rng.index(std::uint64_t(cfg.max_nz)));
    int na = 2 + int(rng.index(std::uint64_t(cfg.max_na - 1)));
    RewardCompat compat = (i % 2 == 0) ? RewardCompat::kExactReward : RewardCompat::kPerturbed;
    Instance inst = random_instance(seed, nx, nz, na, cfg.gamma, compat);

    TabularLCE lce_old = inst.lce;
    lce_old.E = perturb_rows(inst.lce.E, 0.3, rng);
    TabularPolicy pi = random_policy(nz, na, rng);

    BoundReport imp = check_improvement(inst.mdp, inst.lce, lce_old, pi, cfg.tolerance);
    BoundReport pe = check_policy_eval(inst.mdp, inst.lce, pi, cfg.tolerance);
    OfflineResult off = check_offline(inst.mdp, inst.lce, 200, cfg.tolerance);

    SuiteRow row;
    row.seed = seed;
    row.nx = nx;
    row.nz = nz;
    row.na = na;
    row.improvement_slack = imp.min_slack;
    row.policy_eval_slack = pe.min_slack;
    row.offline_slack = off.report.min_slack;
    row.pass = imp.pass && pe.pass && off.report.pass;
    res.rows.push_back(row);
    res.all_pass = res.all_pass && row.pass;
    res.min_slack = std::min({res.min_slack, row.improvement_slack, row.policy_eval_slack,
                              row.offline_slack});
  }
  return res;
}

void write_suite_csv(const SuiteResult& res, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ResourceError("cannot open " + path);
  os << "seed,nx,nz,na,improvement_slack,policy_eval_slack,offline_slack,pass\n";
  for (const auto& r : res.rows) {
    os << r.seed << ',' << r.nx << ',' << r.nz << ',' << r.na << ',' << r.improvement_slack
       << ',' << r.policy_eval_slack << ',' << r.offline_slack << ',' << (r.pass ? 1 : 0)
       << '\n';
  }
}

}  // namespace carl::bounds
