#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "carl/sac.hpp"

#include <cmath>

using namespace carl;
using namespace carl::sac;

namespace {

model::LceArch micro_arch_f(double var_floor = 1e-12) {
  model::LceArch a;
  a.env = "micro";
  a.n_z = 2;
  a.action_dim = 1;
  a.frames = 1;
  a.height = 1;
  a.width = 2;
  a.enc_widths = {};
  a.dec_widths = {};
  a.dyn_widths = {};
  a.bwd_nz = 1;
  a.bwd_na = 1;
  a.bwd_nx = 1;
  a.bwd_joint = 1;
  a.act = nn::Act::kIdentity;
  a.residual_dynamics = true;
  a.variance_floor = var_floor;
  return a;
}

// identity latent dynamics: residual connection plus a zeroed head
model::LceF identity_dynamics_model() {
  Rng rng(3);
  model::LceF m = model::LceF::create(micro_arch_f(), rng);
  for (auto& e : m.params.entries()) {
    if (e.name.rfind("dynamics", 0) == 0) e.value.setZero();
  }
  for (auto& e : m.params.entries()) {
    if (e.name == "dynamics.b0") {
      e.value(2, 0) = -60.0f;  // log-variance rows pinned far below the floor
      e.value(3, 0) = -60.0f;
    }
  }
  return m;
}

SACConfig tiny_cfg() {
  SACConfig cfg;
  cfg.batch_size = 8;
  cfg.hidden = 16;
  cfg.rollout_k = 0;
  cfg.goal_conditioned = true;
  return cfg;
}

SacAgent make_agent(const SACConfig& cfg, std::uint64_t seed = 1) {
  Rng rng(seed);
  VecF lo = VecF::Constant(1, -2.0f), hi = VecF::Constant(1, 2.0f);
  return SacAgent::create(2, 1, lo, hi, cfg, rng);
}

LatentTransition transition_fixture(float r_override = std::nanf("")) {
  LatentTransition t;
  t.z = (VecF(2) << 0.5f, -0.5f).finished();
  t.a = VecF::Zero(1);
  t.z_next = (VecF(2) << 1.0f, 0.0f).finished();
  t.z_goal = (VecF(2) << 0.0f, 0.0f).finished();
  SACConfig cfg;
  t.r = std::isnan(r_override) ? latent_reward(t.z_next, t.z_goal, t.a, cfg) : r_override;
  return t;
}

}  // namespace

TEST_CASE("latent reward closed forms") {
  SACConfig cfg;
  CHECK(cfg.reward_kappa == 50.0);
  VecF zg = (VecF(2) << 1.0f, 2.0f).finished();
  CHECK(latent_reward(zg, zg, VecF(VecF::Zero(1)), cfg) == 0.0f);

  VecF zn = (VecF(2) << 1.1f, 2.0f).finished();
  VecF a = (VecF(1) << 0.2f).finished();
  CHECK(latent_reward(zn, zg, a, cfg) == doctest::Approx(-0.54).epsilon(1e-5));

  cfg.reward_form = RewardForm::kNegDistance;
  CHECK(latent_reward(zn, zg, a, cfg) == doctest::Approx(-0.1).epsilon(1e-5));
  CHECK_THROWS_AS(latent_reward(VecF(VecF::Zero(3)), zg, a, cfg), InputError);
}

TEST_CASE("deterministic actions are pure and schedule-invariant") {
  SacAgent agent = make_agent(tiny_cfg());
  VecF z_in = VecF::Ones(4);  // goal-conditioned input: [z; z_goal]
  VecF a1 = agent.act(z_in, false);
  VecF a2 = agent.act(z_in, false);
  CHECK((a1 - a2).cwiseAbs().maxCoeff() == 0.0f);
  agent.set_schedule_state(0.05, 0.5);  // exploration state must not leak in
  VecF a3 = agent.act(z_in, false);
  CHECK((a1 - a3).cwiseAbs().maxCoeff() == 0.0f);
  CHECK(a1.size() == 1);
  CHECK(a1[0] >= -2.0f);
  CHECK(a1[0] <= 2.0f);

  Rng rng(5);
  VecF ae = agent.act(z_in, true, &rng);
  CHECK(ae[0] >= -2.0f);
  CHECK(ae[0] <= 2.0f);
}

TEST_CASE("exploration and entropy schedules decay to their floors") {
  SACConfig cfg = tiny_cfg();
  SacAgent agent = make_agent(cfg);
  model::LceF m = identity_dynamics_model();
  Rng rng(7);
  std::vector<LatentTransition> batch{transition_fixture()};
  for (int i = 0; i < 1000; ++i) agent.update(batch, m, rng);
  CHECK(agent.sigma() == doctest::Approx(std::pow(0.999, 1000)).epsilon(1e-6));
  CHECK(agent.sigma() == doctest::Approx(0.368).epsilon(2e-3));
  CHECK(agent.alpha() == doctest::Approx(0.2 * std::pow(0.99995, 1000)).epsilon(1e-6));

  // floors
  agent.set_schedule_state(0.0100001, 0.02500001);
  agent.update(batch, m, rng);
  CHECK(agent.sigma() == 0.025);
  CHECK(agent.alpha() == 0.01);
}

TEST_CASE("q_target: k = 0 returns the stored reward exactly") {
  SACConfig cfg = tiny_cfg();
  cfg.rollout_k = 0;
  cfg.bootstrap = false;
  SacAgent agent = make_agent(cfg);
  model::LceF m = identity_dynamics_model();
  LatentTransition t = transition_fixture(-0.75f);
  Rng rng(9);
  CHECK(agent.q_target(m, t, rng) == -0.75f);
}

TEST_CASE("q_target: deterministic dynamics and constant reward sum geometrically") {
  // identity latent dynamics and unit distance to goal: every rollout step
  // sees reward -1 under the neg-distance form
  SACConfig cfg = tiny_cfg();
  cfg.rollout_k = 2;
  cfg.gamma = 0.9;
  cfg.reward_form = RewardForm::kNegDistance;
  SacAgent agent = make_agent(cfg);
  model::LceF m = identity_dynamics_model();
  LatentTransition t;
  t.z = (VecF(2) << 1.0f, 0.0f).finished();
  t.a = VecF::Zero(1);
  t.z_next = t.z;
  t.z_goal = (VecF(2) << 0.0f, 0.0f).finished();
  t.r = -1.0f;
  Rng rng(11);
  float q = agent.q_target(m, t, rng);
  CHECK(q == doctest::Approx(-2.71).epsilon(1e-4));
}

TEST_CASE("bootstrap flag appends the discounted target-critic tail") {
  SACConfig cfg = tiny_cfg();
  cfg.rollout_k = 0;
  cfg.gamma = 0.9;
  cfg.bootstrap = true;
  SacAgent agent = make_agent(cfg);
  model::LceF m = identity_dynamics_model();
  LatentTransition t = transition_fixture(-1.0f);
  Rng rng(13);
  float with_boot = agent.q_target(m, t, rng);
  // the tail is gamma * minQ(z', a'); recompute it through the hooks
  auto hooks = agent.value_hooks();
  // bounded below by -1 + gamma * min over plausible Q values; just check the
  // bootstrap changed the target and stays finite
  CHECK(with_boot != -1.0f);
  CHECK(std::isfinite(with_boot));
  (void)hooks;
}

TEST_CASE("polyak targets trail the live critics at exactly (1 - rate)^n") {
  SACConfig cfg = tiny_cfg();
  cfg.critic_lr = 0.0;  // freeze the live critics
  cfg.actor_lr = 0.0;
  SacAgent agent = make_agent(cfg);
  model::LceF m = identity_dynamics_model();
  // displace the targets, then watch the gap contract
  float offset = 0.37f;
  for (auto& e : agent.target_params().entries()) e.value.array() += offset;
  double gap0 = 0.0;
  for (int i = 0; i < agent.critic_params().size(); ++i)
    gap0 = std::max<double>(gap0, (agent.target_params().at(i).value -
                                   agent.critic_params().at(i).value)
                                      .cwiseAbs()
                                      .maxCoeff());
  Rng rng(17);
  std::vector<LatentTransition> batch{transition_fixture()};
  const int n = 25;
  for (int i = 0; i < n; ++i) agent.update(batch, m, rng);
  for (int i = 0; i < agent.critic_params().size(); ++i) {
    MatF gap = agent.target_params().at(i).value - agent.critic_params().at(i).value;
    CHECK(gap.cwiseAbs().maxCoeff() ==
          doctest::Approx(gap0 * std::pow(0.995, n)).epsilon(1e-4));
  }
}

TEST_CASE("zero-gradient fixed point leaves parameters unchanged") {
  SACConfig cfg = tiny_cfg();
  cfg.alpha0 = 0.0;
  cfg.alpha_min = 0.0;
  SacAgent agent = make_agent(cfg);
  model::LceF m = identity_dynamics_model();
  for (auto& e : agent.critic_params().entries()) e.value.setZero();
  for (auto& e : agent.target_params().entries()) e.value.setZero();
  MatF actor_before(0, 0);
  std::vector<MatF> before;
  for (auto& e : agent.actor_params().entries()) before.push_back(e.value);
  // one-transition toy already at the optimum: reward 0, targets 0, critics 0
  LatentTransition t;
  t.z = VecF::Zero(2);
  t.a = VecF::Zero(1);
  t.z_next = VecF::Zero(2);
  t.z_goal = VecF::Zero(2);
  t.r = 0.0f;
  Rng rng(19);
  agent.update({t}, m, rng);
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK((agent.actor_params().at(int(i)).value - before[i]).cwiseAbs().maxCoeff() == 0.0f);
  for (auto& e : agent.critic_params().entries())
    CHECK(e.value.cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("critic loss decreases on a frozen toy buffer") {
  SACConfig cfg = tiny_cfg();
  cfg.rollout_k = 0;  // fixed targets make the regression oracle exact
  SacAgent agent = make_agent(cfg, 23);
  model::LceF m = identity_dynamics_model();
  Rng data_rng(29);
  std::vector<LatentTransition> buffer;
  for (int i = 0; i < 256; ++i) {
    LatentTransition t;
    t.z = data_rng.normal_vec<float>(2);
    t.a = data_rng.uniform_vec<float>(1, -2, 2);
    t.z_next = data_rng.normal_vec<float>(2);
    t.z_goal = VecF::Zero(2);
    t.r = latent_reward(t.z_next, t.z_goal, t.a, cfg);
    buffer.push_back(t);
  }
  Rng rng(31);
  double first = 0.0, last = 0.0;
  for (int step = 0; step < 400; ++step) {
    std::vector<LatentTransition> batch;
    for (int j = 0; j < cfg.batch_size; ++j)
      batch.push_back(buffer[rng.index(buffer.size())]);
    auto st = agent.update(batch, m, rng);
    if (step == 0) first = st.critic_loss;
    if (step == 99) CHECK(st.critic_loss < first);  // strict decrease inside 100 updates
    last = st.critic_loss;
  }
  CHECK(last < first);
  CHECK(last < 0.5 * first);
}

TEST_CASE("build_latent_batch: exact encoder/dynamics reproduce the underlying chain") {
  model::LceF m = identity_dynamics_model();
  // encoder: z = (x0 - x1, x0 + x1) with near-zero variance
  for (auto& e : m.params.entries()) {
    if (e.name == "encoder.w0") {
      e.value.setZero();
      e.value(0, 0) = 1;
      e.value(0, 1) = -1;
      e.value(1, 0) = 1;
      e.value(1, 1) = 1;
    }
    if (e.name == "encoder.b0") {
      e.value.setZero();
      e.value(2, 0) = -60;
      e.value(3, 0) = -60;
    }
  }
  envs::Triplet tr;
  tr.x.pixels = (VecF(2) << 1.0f, 0.0f).finished();
  tr.a = VecF::Zero(1);
  tr.x_next.pixels = (VecF(2) << 0.0f, 1.0f).finished();
  tr.x_goal.pixels = (VecF(2) << 0.0f, 1.0f).finished();
  SACConfig cfg = tiny_cfg();
  Rng rng(37);
  auto latents = build_latent_batch(m, {tr}, cfg, rng, /*next_from_model=*/true);
  REQUIRE(latents.size() == 1);
  // z = (1, 1); identity dynamics keep it; reward recomputable from the tuple
  CHECK(latents[0].z[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(latents[0].z[1] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK((latents[0].z_next - latents[0].z).cwiseAbs().maxCoeff() < 1e-4);
  CHECK(latents[0].r ==
        doctest::Approx(latent_reward(latents[0].z_next, latents[0].z_goal, latents[0].a, cfg)));

  Rng rng2(37);
  auto latents2 = build_latent_batch(m, {tr}, cfg, rng2, /*next_from_model=*/false);
  CHECK(latents2[0].z_next[0] == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("latent buffer ring semantics and capacity") {
  LatentBuffer buf(4);
  for (int i = 0; i < 6; ++i) {
    LatentTransition t;
    t.r = float(i);
    buf.add(std::move(t));
  }
  CHECK(buf.size() == 4);
  CHECK(buf.at(0).r == 2.0f);  // oldest two evicted
  CHECK(buf.at(3).r == 5.0f);
  Rng rng(41);
  auto sample = buf.sample(8, rng);
  CHECK(sample.size() == 8);
}

TEST_CASE("update rejects empty batches and reports finite losses") {
  SACConfig cfg = tiny_cfg();
  SacAgent agent = make_agent(cfg);
  model::LceF m = identity_dynamics_model();
  Rng rng(43);
  CHECK_THROWS_AS(agent.update({}, m, rng), InputError);
  auto st = agent.update({transition_fixture()}, m, rng);
  CHECK(std::isfinite(st.critic_loss));
  CHECK(std::isfinite(st.actor_loss));
}
