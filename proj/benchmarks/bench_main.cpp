#include "carl/bound_checks.hpp"
#include "carl/envs/env.hpp"
#include "carl/lce.hpp"
#include "carl/losses.hpp"
#include "carl/sac.hpp"

#include <benchmark/benchmark.h>

using namespace carl;

static void BM_EncoderForward(benchmark::State& state) {
  Rng rng(0);
  model::LceF m = model::LceF::create(model::arch_for(envs::EnvName::kPlanar), rng);
  MatF x = rng.normal_mat<float>(1600, int(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(m.encode_means(x));
  }
}
BENCHMARK(BM_EncoderForward)->Arg(1)->Arg(32)->Arg(128);

static void BM_TotalLossStep(benchmark::State& state) {
  Rng rng(1);
  model::LceF m = model::LceF::create(model::arch_for(envs::EnvName::kPlanar), rng);
  const int b = int(state.range(0));
  losses::TotalLossInputs<float> in;
  in.m = &m;
  in.mode = losses::Regime::kOffline;
  in.x = rng.normal_mat<float>(1600, b).cwiseAbs().cwiseMin(1.0f);
  in.a = rng.normal_mat<float>(2, b);
  in.x_next = rng.normal_mat<float>(1600, b).cwiseAbs().cwiseMin(1.0f);
  in.x_goal = in.x_next;
  losses::LossWeights w;
  for (auto _ : state) {
    losses::LossNoise<float> noise = losses::LossNoise<float>::draw(rng, 2, 2, b);
    ad::Tape<float> tape;
    nn::Ctx<float> ctx(tape, m.params, true);
    auto [total, rep] = losses::total_loss_t<float>(ctx, in, w, noise);
    m.params.zero_grad();
    tape.backward(total);
    ctx.collect_grads();
    benchmark::DoNotOptimize(rep.total);
  }
}
BENCHMARK(BM_TotalLossStep)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

static void BM_EnvStepRender(benchmark::State& state) {
  auto env = envs::make_env("swingup", 0);
  Rng rng(2);
  envs::UnderlyingState s = env->sample_uniform_state(rng);
  VecF a = VecF::Constant(1, 0.5f);
  for (auto _ : state) {
    envs::StepOutput o = envs::step(*env, s, a);
    s = o.next;
    benchmark::DoNotOptimize(o.obs.pixels.sum());
  }
}
BENCHMARK(BM_EnvStepRender);

static void BM_SacUpdate(benchmark::State& state) {
  Rng rng(3);
  model::LceArch arch = model::arch_for(envs::EnvName::kPlanar);
  model::LceF m = model::LceF::create(arch, rng);
  sac::SACConfig cfg;
  cfg.batch_size = 128;
  sac::SacAgent agent = sac::SacAgent::create(2, 2, VecF::Constant(2, -3.0f),
                                              VecF::Constant(2, 3.0f), cfg, rng);
  std::vector<sac::LatentTransition> batch;
  for (int i = 0; i < cfg.batch_size; ++i) {
    sac::LatentTransition t;
    t.z = rng.normal_vec<float>(2);
    t.a = rng.normal_vec<float>(2);
    t.z_next = rng.normal_vec<float>(2);
    t.z_goal = VecF::Zero(2);
    t.r = sac::latent_reward(t.z_next, t.z_goal, t.a, cfg);
    batch.push_back(t);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(agent.update(batch, m, rng));
  }
}
BENCHMARK(BM_SacUpdate)->Unit(benchmark::kMillisecond);

static void BM_BoundInstance(benchmark::State& state) {
  for (auto _ : state) {
    bounds::Instance inst =
        bounds::random_instance(7, 8, 4, 3, 0.9, bounds::RewardCompat::kPerturbed);
    Rng rng(7);
    bounds::TabularPolicy pi = bounds::random_policy(4, 3, rng);
    benchmark::DoNotOptimize(bounds::check_policy_eval(inst.mdp, inst.lce, pi));
  }
}
BENCHMARK(BM_BoundInstance);

BENCHMARK_MAIN();
