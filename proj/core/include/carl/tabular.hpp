#pragma once

#include "carl/common.hpp"
#include "carl/rng.hpp"

#include <limits>
#include <vector>

// Finite-instance counterparts of the observation MDP and the latent
// controllable embedding. Everything here is exact double-precision linear
// algebra; no sampling, no networks.
namespace carl::bounds {

struct TabularMDP {
  int nx = 0, na = 0;
  std::vector<MatD> P;  // P[a](x, x') transition kernel
  MatD r;               // (nx x na)
  double gamma = 0.9;
  double r_max = 1.0;

  void validate(double tol = 1e-12) const;
};

struct TabularLCE {
  int nz = 0;
  MatD E;               // (nx x nz) encoder rows
  std::vector<MatD> F;  // F[a](z, z') latent dynamics
  MatD D;               // (nz x nx) decoder rows
  MatD r_bar;           // (nz x na)

  void validate(double tol = 1e-12) const;
};

// Row-stochastic policy table; rows are states of its domain (X or Z).
using TabularPolicy = MatD;

// (pi o E)(a|x), the observation-space image of a latent policy.
MatD policy_image(const MatD& E, const TabularPolicy& pi);

MatD induced_kernel(const std::vector<MatD>& P, const TabularPolicy& policy);
VecD induced_reward(const MatD& r, const TabularPolicy& policy);

// Solves (I - gamma * P_mu) U = r_mu. Throws on gamma >= 1.
VecD exact_U(const TabularMDP& mdp, const TabularPolicy& mu);
VecD exact_V(const TabularLCE& lce, const TabularPolicy& pi, double gamma);

// Q(z,a) = r_bar(z,a) + gamma * sum_z' F[a](z,z') V(z')
MatD latent_q(const TabularLCE& lce, const VecD& v, double gamma);

// Deterministic argmax policy over latent Q; ties resolved to the lowest
// action index.
TabularPolicy latent_greedy(const TabularLCE& lce, const VecD& v, double gamma);

// KL(p || q) over a finite support with 0*log0 = 0; +inf when the support
// condition fails.
double kl_discrete(const VecD& p, const VecD& q);

constexpr double kInf = std::numeric_limits<double>::infinity();

// Per-observation error term of the improvement bound, policy form. term4 is
// the KL between the encoded next-state marginal and the latent prediction
// marginal. total = term1 + term2 + gamma*r_max/(sqrt(2)(1-gamma)) * (term3 + term4).
struct DeltaBreakdown {
  VecD total;
  VecD term1, term2, term3, term4;
};

DeltaBreakdown delta_term(const TabularMDP& mdp, const TabularLCE& lce, const TabularPolicy& pi);

// Same coefficients, but term4 replaced by the conditional-consistency form
// sqrt( sum_x' P_pe(x'|x) KL(E(.|x') || (F_pi o E)(.|x)) ) used by the
// Bellman-residual statement.
DeltaBreakdown delta_term_residual(const TabularMDP& mdp, const TabularLCE& lce,
                                   const TabularPolicy& pi);

// Action-dependent, policy-independent error term used by the offline bound:
// (nx x na).
MatD delta_action(const TabularMDP& mdp, const TabularLCE& lce);

enum class RewardCompat { kExactReward, kPerturbed };

struct Instance {
  TabularMDP mdp;
  TabularLCE lce;
};

// Seeded random instance on the simplex. kExactReward builds a deterministic
// encoder and sets r(x,a) = r_bar(zeta(x),a) so the reward-mismatch term
// vanishes for every latent policy; kPerturbed draws r and r_bar
// independently. Rows get a uniform floor so supports are full and the KL
// terms stay finite.
Instance random_instance(std::uint64_t seed, int nx, int nz, int na, double gamma,
                         RewardCompat compat);

// nz = nx, E = D = I, F = P, r_bar = r.
TabularLCE identity_lce(const TabularMDP& mdp);

// Row-stochastic mixture (1-eta) * E + eta * random rows.
MatD perturb_rows(const MatD& rows, double eta, Rng& rng);

TabularPolicy random_policy(int n_states, int na, Rng& rng);
TabularPolicy uniform_policy(int n_states, int na);

}  // namespace carl::bounds
