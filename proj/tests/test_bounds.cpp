#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "carl/bound_checks.hpp"
#include "carl/tabular.hpp"

#include <cmath>

using namespace carl;
using namespace carl::bounds;

namespace {

// reference oracle: plain value iteration
VecD value_iteration_U(const TabularMDP& mdp, const TabularPolicy& mu, int iters) {
  MatD p = induced_kernel(mdp.P, mu);
  VecD r = induced_reward(mdp.r, mu);
  VecD u = VecD::Zero(mdp.nx);
  for (int i = 0; i < iters; ++i) u = r + mdp.gamma * (p * u);
  return u;
}

VecD value_iteration_V(const TabularLCE& lce, const TabularPolicy& pi, double gamma, int iters) {
  MatD f = induced_kernel(lce.F, pi);
  VecD r = induced_reward(lce.r_bar, pi);
  VecD v = VecD::Zero(lce.nz);
  for (int i = 0; i < iters; ++i) v = r + gamma * (f * v);
  return v;
}

}  // namespace

TEST_CASE("exact_U closed forms") {
  TabularMDP mdp;
  mdp.nx = 1;
  mdp.na = 1;
  mdp.P = {MatD::Ones(1, 1)};
  mdp.r = MatD::Ones(1, 1);
  mdp.gamma = 0.5;
  TabularPolicy mu = MatD::Ones(1, 1);
  CHECK(exact_U(mdp, mu)(0) == doctest::Approx(2.0).epsilon(1e-14));

  mdp.r.setZero();
  CHECK(exact_U(mdp, mu)(0) == doctest::Approx(0.0));
}

TEST_CASE("exact_U matches long value iteration on a random instance") {
  Instance inst = random_instance(42, 6, 3, 3, 0.9, RewardCompat::kPerturbed);
  Rng rng(1);
  TabularPolicy mu = random_policy(6, 3, rng);
  VecD u = exact_U(inst.mdp, mu);
  VecD u_vi = value_iteration_U(inst.mdp, mu, 10000);
  CHECK((u - u_vi).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("exact_V: identity LCE gives V = U, constant reward gives c/(1-gamma)") {
  Instance inst = random_instance(7, 5, 5, 2, 0.9, RewardCompat::kPerturbed);
  TabularLCE id = identity_lce(inst.mdp);
  Rng rng(2);
  TabularPolicy pi = random_policy(5, 2, rng);
  VecD v = exact_V(id, pi, inst.mdp.gamma);
  VecD u = exact_U(inst.mdp, pi);
  CHECK((v - u).cwiseAbs().maxCoeff() < 1e-10);

  TabularLCE lce = inst.lce;
  lce.r_bar = MatD::Constant(lce.nz, inst.mdp.na, 0.3);
  VecD vc = exact_V(lce, random_policy(lce.nz, inst.mdp.na, rng), inst.mdp.gamma);
  CHECK((vc.array() - 3.0).abs().maxCoeff() < 1e-10);

  VecD v_vi = value_iteration_V(inst.lce, pi, 0.9, 10000);
  VecD v_exact = exact_V(inst.lce, pi, 0.9);
  CHECK((v_vi - v_exact).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("gamma = 1 is rejected") {
  TabularMDP mdp;
  mdp.nx = 1;
  mdp.na = 1;
  mdp.P = {MatD::Ones(1, 1)};
  mdp.r = MatD::Ones(1, 1);
  mdp.gamma = 1.0;
  CHECK_THROWS_AS(exact_U(mdp, MatD::Ones(1, 1)), InputError);
}

TEST_CASE("latent_greedy matches exhaustive policy enumeration and breaks ties low") {
  Instance inst = random_instance(3, 4, 3, 2, 0.9, RewardCompat::kPerturbed);
  Rng rng(5);
  TabularPolicy pi = random_policy(3, 2, rng);
  VecD v = exact_V(inst.lce, pi, 0.9);
  TabularPolicy greedy = latent_greedy(inst.lce, v, 0.9);

  // enumeration oracle over all deterministic policies: the greedy policy
  // must maximize the one-step backup at every latent state
  MatD q = latent_q(inst.lce, v, 0.9);
  for (int z = 0; z < 3; ++z) {
    int chosen = 0;
    for (int a = 0; a < 2; ++a)
      if (greedy(z, a) == 1.0) chosen = a;
    for (int a = 0; a < 2; ++a) CHECK(q(z, chosen) >= q(z, a) - 1e-14);
  }

  // tie rule: all-equal row picks action 0
  TabularLCE lce = inst.lce;
  lce.r_bar.setZero();
  for (auto& f : lce.F) f = MatD::Constant(3, 3, 1.0 / 3.0);
  TabularPolicy tied = latent_greedy(lce, VecD::Zero(3), 0.9);
  for (int z = 0; z < 3; ++z) {
    CHECK(tied(z, 0) == 1.0);
  }
}

TEST_CASE("delta_term: identity LCE with compatible rewards vanishes") {
  Instance inst = random_instance(11, 5, 5, 2, 0.9, RewardCompat::kPerturbed);
  TabularLCE id = identity_lce(inst.mdp);
  Rng rng(6);
  TabularPolicy pi = random_policy(5, 2, rng);
  DeltaBreakdown d = delta_term(inst.mdp, id, pi);
  CHECK(d.total.cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("delta_term: reward shift of epsilon appears as exactly 2 epsilon") {
  // 2-state instance, identity LCE, then shift r_bar by epsilon
  Instance inst = random_instance(13, 2, 2, 2, 0.9, RewardCompat::kPerturbed);
  TabularLCE id = identity_lce(inst.mdp);
  const double eps = 0.125;
  id.r_bar.array() += eps;
  Rng rng(7);
  TabularPolicy pi = random_policy(2, 2, rng);
  DeltaBreakdown d = delta_term(inst.mdp, id, pi);
  for (int x = 0; x < 2; ++x) {
    CHECK(d.term2[x] == doctest::Approx(2.0 * eps).epsilon(1e-12));
    CHECK(d.total[x] == doctest::Approx(2.0 * eps).epsilon(1e-10));
  }
}

TEST_CASE("delta_term is elementwise nonnegative on random instances") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Instance inst = random_instance(seed, 6, 3, 3, 0.9,
                                    seed % 2 ? RewardCompat::kPerturbed
                                             : RewardCompat::kExactReward);
    Rng rng(seed);
    TabularPolicy pi = random_policy(3, 3, rng);
    DeltaBreakdown d = delta_term(inst.mdp, inst.lce, pi);
    CHECK(d.total.minCoeff() >= 0.0);
  }
}

TEST_CASE("exact_reward instances zero the reward-mismatch term for any policy") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Instance inst = random_instance(seed, 7, 3, 3, 0.9, RewardCompat::kExactReward);
    Rng rng(seed + 100);
    TabularPolicy pi = random_policy(3, 3, rng);
    DeltaBreakdown d = delta_term(inst.mdp, inst.lce, pi);
    CHECK(d.term2.cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("decoder zero with encoder support raises the +inf sentinel") {
  Instance inst = random_instance(17, 3, 2, 2, 0.9, RewardCompat::kPerturbed);
  TabularLCE lce = inst.lce;
  lce.D(0, 0) = 0.0;
  lce.D.row(0) /= lce.D.row(0).sum();
  Rng rng(8);
  TabularPolicy pi = random_policy(2, 2, rng);
  DeltaBreakdown d = delta_term(inst.mdp, lce, pi);
  bool any_inf = false;
  for (int x = 0; x < 3; ++x) any_inf |= std::isinf(d.term1[x]);
  CHECK(any_inf);
}

TEST_CASE("distillation recovers the exact policy under an identity encoder") {
  Instance inst = random_instance(19, 4, 4, 3, 0.9, RewardCompat::kPerturbed);
  TabularLCE id = identity_lce(inst.mdp);
  Rng rng(9);
  TabularPolicy pi = random_policy(4, 3, rng);
  MatD mu = policy_image(id.E, pi);
  TabularPolicy rec = distill_policy(id.E, mu);
  CHECK((rec - pi).cwiseAbs().maxCoeff() < 1e-9);

  double obj = 0.0;
  MatD img = policy_image(id.E, rec);
  for (int x = 0; x < 4; ++x) obj += kl_discrete(img.row(x).transpose(), mu.row(x).transpose());
  CHECK(obj < 1e-12);
}

TEST_CASE("check_improvement with identity LCE reproduces PI monotonicity") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Instance inst = random_instance(seed + 30, 5, 5, 3, 0.9, RewardCompat::kPerturbed);
    TabularLCE id = identity_lce(inst.mdp);
    Rng rng(seed);
    TabularPolicy pi = random_policy(5, 3, rng);
    BoundReport rep = check_improvement(inst.mdp, id, id, pi);
    CHECK(rep.pass);
    // with a perfect model the bound reduces to U_{mu+} >= U_mu pointwise
    MatD mu = policy_image(id.E, pi);
    VecD u = exact_U(inst.mdp, mu);
    VecD v = exact_V(id, pi, 0.9);
    TabularPolicy plus = latent_greedy(id, v, 0.9);
    VecD u_plus = exact_U(inst.mdp, policy_image(id.E, plus));
    CHECK((u_plus - u).minCoeff() >= -1e-10);
    for (int x = 0; x < 5; ++x)
      CHECK(rep.slacks[std::size_t(x)] == doctest::Approx(u_plus[x] - u[x]).epsilon(1e-6));
  }
}

TEST_CASE("check_improvement degenerates to the reward-mismatch inequality at gamma = 0") {
  // gamma -> 0 removes every Delta term; with compatible rewards the greedy
  // step maximizes the immediate latent reward, so improvement is pointwise
  Instance inst = random_instance(23, 6, 3, 3, 1e-12, RewardCompat::kExactReward);
  Rng rng(10);
  TabularPolicy pi = random_policy(3, 3, rng);
  BoundReport rep = check_improvement(inst.mdp, inst.lce, inst.lce, pi);
  CHECK(rep.valid);
  CHECK(rep.pass);
}

TEST_CASE("check_policy_eval: identity instance has both sides zero") {
  Instance inst = random_instance(29, 5, 5, 2, 0.9, RewardCompat::kPerturbed);
  TabularLCE id = identity_lce(inst.mdp);
  Rng rng(11);
  TabularPolicy pi = random_policy(5, 2, rng);
  MatD mu = policy_image(id.E, pi);
  VecD u = exact_U(inst.mdp, mu);
  VecD ve = id.E * exact_V(id, pi, 0.9);
  CHECK((ve - u).cwiseAbs().maxCoeff() < 1e-10);
  BoundReport rep = check_policy_eval(inst.mdp, id, pi);
  CHECK(rep.pass);
}

TEST_CASE("check_policy_eval holds when the decoder is inflated toward uniform") {
  Instance inst = random_instance(31, 6, 3, 2, 0.9, RewardCompat::kExactReward);
  Rng rng(12);
  TabularPolicy pi = random_policy(3, 2, rng);
  BoundReport before = check_policy_eval(inst.mdp, inst.lce, pi);
  CHECK(before.pass);

  TabularLCE blurred = inst.lce;
  blurred.D = 0.25 * blurred.D + 0.75 * MatD::Constant(3, 6, 1.0 / 6.0);
  BoundReport after = check_policy_eval(inst.mdp, blurred, pi);
  CHECK(after.pass);
}

TEST_CASE("check_offline: identity LCE converges to the MDP optimum") {
  Instance inst = random_instance(37, 5, 5, 3, 0.9, RewardCompat::kPerturbed);
  TabularLCE id = identity_lce(inst.mdp);
  OfflineResult res = check_offline(inst.mdp, id);
  CHECK(res.converged);
  CHECK(res.report.pass);
  CHECK(res.suboptimality_vs_mdp_optimal < 1e-9);
  CHECK(res.suboptimality_vs_latent_image < 1e-12);
}

TEST_CASE("check_offline: perturbed dynamics respect the terminal limit bound") {
  // deterministic cyclic MDP, identity embedding, dynamics blurred by eta
  const int n = 4;
  TabularMDP mdp;
  mdp.nx = n;
  mdp.na = 2;
  mdp.gamma = 0.9;
  mdp.r_max = 1.0;
  MatD fwd = MatD::Zero(n, n), back = MatD::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    fwd(i, (i + 1) % n) = 1.0;
    back(i, (i + n - 1) % n) = 1.0;
  }
  mdp.P = {fwd, back};
  mdp.r.resize(n, 2);
  mdp.r << 1.0, 0.0, 0.5, -0.5, -1.0, 0.3, 0.2, 0.8;

  TabularLCE lce = identity_lce(mdp);
  const double eta = 0.02;
  for (auto& f : lce.F) f = (1.0 - eta) * f + eta * MatD::Constant(n, n, 1.0 / n);

  OfflineResult res = check_offline(mdp, lce);
  CHECK(res.converged);
  CHECK(res.report.pass);
  CHECK(res.suboptimality_vs_mdp_optimal <= res.limit_bound + 1e-9);
}

TEST_CASE("random_instance is reproducible and row-stochastic") {
  Instance a = random_instance(91, 6, 4, 3, 0.9, RewardCompat::kPerturbed);
  Instance b = random_instance(91, 6, 4, 3, 0.9, RewardCompat::kPerturbed);
  CHECK((a.lce.E - b.lce.E).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.mdp.r - b.mdp.r).cwiseAbs().maxCoeff() == 0.0);
  for (int x = 0; x < 6; ++x) CHECK(std::abs(a.lce.E.row(x).sum() - 1.0) < 1e-12);
  for (const auto& p : a.mdp.P)
    for (int x = 0; x < 6; ++x) CHECK(std::abs(p.row(x).sum() - 1.0) < 1e-12);
}

TEST_CASE("bound suite passes on a 20-instance smoke run") {
  SuiteConfig cfg;
  cfg.instances = 20;
  SuiteResult res = run_bound_suite(cfg);
  CHECK(res.all_pass);
  CHECK(res.min_slack >= -cfg.tolerance);
}
