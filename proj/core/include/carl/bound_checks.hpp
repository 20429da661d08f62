#pragma once

#include "carl/tabular.hpp"

#include <string>
#include <vector>

namespace carl::bounds {

struct BoundReport {
  std::string name;
  bool valid = true;   // construction preconditions held
  bool pass = false;   // every slack >= -tolerance
  double min_slack = kInf;
  std::vector<double> slacks;  // per-x (or per-x per-iteration) slack values
  std::string note;
};

// Exact minimizer of sum_x KL((pi o E)(.|x) || mu(.|x)) over row-stochastic
// latent policies; convex, solved by exponentiated gradient descent.
TabularPolicy distill_policy(const MatD& E, const MatD& mu, int max_iters = 20000,
                             double tol = 1e-12);

// Theorem-1 policy improvement: mu = pi o E_old; pi_d distilled against mu
// under E_new; pi_plus greedy after exact evaluation of pi_d; verifies
//   U_{mu+}(x) >= U_mu(x) - g/(1-g) * (Delta(pi_d,x) + Delta(pi+,x))
//                - R/(1-g) * KL((pi_d o E_new)(.|x) || mu(.|x)).
BoundReport check_improvement(const TabularMDP& mdp, const TabularLCE& lce_new,
                              const TabularLCE& lce_old, const TabularPolicy& pi,
                              double tolerance = 1e-9);

// Policy evaluation: |V_pi o E - U_{pi o E}| <= g/(1-g) * Delta(x) plus the
// Bellman-residual inequality with the conditional consistency term.
BoundReport check_policy_eval(const TabularMDP& mdp, const TabularLCE& lce,
                              const TabularPolicy& pi, double tolerance = 1e-9);

// Offline latent policy iteration with a fixed LCE: per-iteration improvement
// with the worst-case-action Delta, plus the terminal sub-optimality limits.
struct OfflineResult {
  BoundReport report;
  int iterations = 0;
  bool converged = false;
  double suboptimality_vs_latent_image = 0.0;  // vs U_{pi* o E} (paper's limit)
  double suboptimality_vs_mdp_optimal = 0.0;   // vs the optimal observation value
  double limit_bound = 0.0;                    // 2g/(1-g)^2 * max Delta
};
OfflineResult check_offline(const TabularMDP& mdp, const TabularLCE& lce, int max_iters = 200,
                            double tolerance = 1e-9);

// Optimal observation value via exact policy iteration on the MDP itself.
VecD mdp_optimal_value(const TabularMDP& mdp);

struct SuiteRow {
  std::uint64_t seed = 0;
  int nx = 0, nz = 0, na = 0;
  double improvement_slack = 0.0;
  double policy_eval_slack = 0.0;
  double offline_slack = 0.0;
  bool pass = false;
};

struct SuiteConfig {
  int instances = 100;
  int max_nx = 8, max_nz = 4, max_na = 3;
  double gamma = 0.9;
  double tolerance = 1e-9;
  std::uint64_t seed0 = 0;
};

struct SuiteResult {
  std::vector<SuiteRow> rows;
  bool all_pass = true;
  double min_slack = kInf;
};

SuiteResult run_bound_suite(const SuiteConfig& cfg);

void write_suite_csv(const SuiteResult& res, const std::string& path);

}  // namespace carl::bounds
