#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "carl/envs/dataset.hpp"
#include "carl/envs/env.hpp"
#include "carl/io/png_io.hpp"

#include <cmath>
#include <filesystem>

using namespace carl;
using namespace carl::envs;

TEST_CASE("env specs match the benchmark table") {
  auto planar = make_env("planar", 0);
  CHECK(planar->spec().frames == 1);
  CHECK(planar->spec().height == 40);
  CHECK(planar->spec().width == 40);
  CHECK(planar->spec().action_dim == 2);
  CHECK(planar->spec().horizon == 40);

  auto swing = make_env("swingup", 0);
  CHECK(swing->spec().frames == 2);
  CHECK(swing->spec().height == 48);
  CHECK(swing->spec().width == 48);
  CHECK(swing->spec().action_dim == 1);
  CHECK(swing->spec().horizon == 400);

  auto cart = make_env("cartpole", 0);
  CHECK(cart->spec().frames == 2);
  CHECK(cart->spec().height == 80);
  CHECK(cart->spec().horizon == 200);

  auto three = make_env("threepole", 0);
  CHECK(three->spec().action_dim == 3);
  CHECK(three->spec().horizon == 200);

  CHECK_THROWS_AS(make_env("lunar", 0), ConfigError);
}

TEST_CASE("planar: zero action leaves the position unchanged") {
  auto env = make_env("planar", 0);
  Rng rng(1);
  UnderlyingState s = env->sample_uniform_state(rng);
  VecF a = VecF::Zero(2);
  UnderlyingState s2 = env->step_state(s, a);
  CHECK(s2[0] == s[0]);
  CHECK(s2[1] == s[1]);
}

TEST_CASE("swingup: resting equilibrium is preserved by the dynamics") {
  auto env = make_env("swingup", 0);
  UnderlyingState s(2);
  s << M_PI, 0.0;
  UnderlyingState s2 = env->step_state(s, VecF::Zero(1));
  CHECK(std::abs(wrap_angle(s2[0])) == doctest::Approx(M_PI).epsilon(1e-12));
  CHECK(std::abs(s2[1]) < 1e-12);
}

TEST_CASE("step under a fixed (s, a) pair is bit-identical across calls") {
  for (const char* name : {"planar", "swingup", "cartpole", "threepole"}) {
    auto env = make_env(name, 0);
    Rng rng(3);
    UnderlyingState s = env->sample_uniform_state(rng);
    VecF a = rng.uniform_vec<float>(env->spec().action_dim, -0.5, 0.5);
    StepOutput o1 = step(*env, s, a);
    StepOutput o2 = step(*env, s, a);
    CHECK((o1.next - o2.next).cwiseAbs().maxCoeff() == 0.0);
    CHECK((o1.obs.pixels - o2.obs.pixels).cwiseAbs().maxCoeff() == 0.0f);
  }
}

TEST_CASE("identical seeds and action sequences give identical trajectories") {
  auto run = [](std::uint64_t seed) {
    auto env = make_env("cartpole", seed);
    Rng rng(seed);
    UnderlyingState s = env->initial_state(rng);
    VecD accum = VecD::Zero(4);
    Rng act(99);
    for (int t = 0; t < 50; ++t) {
      VecF a = act.uniform_vec<float>(1, -10, 10);
      s = env->step_state(s, a);
      accum += s;
    }
    return accum;
  };
  CHECK((run(7) - run(7)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("goal predicates") {
  auto planar = make_env("planar", 0);
  UnderlyingState at_goal(4);
  at_goal << 37.5, 37.5, 37.5, 37.5;
  CHECK(planar->is_goal(at_goal));
  UnderlyingState near_goal(4);
  near_goal << 34.0, 37.5, 37.5, 37.5;  // distance 3.5 <= 5
  CHECK(planar->is_goal(near_goal));
  UnderlyingState far(4);
  far << 2.5, 2.5, 37.5, 37.5;
  CHECK(!planar->is_goal(far));

  auto swing = make_env("swingup", 0);
  UnderlyingState up(2);
  up << 0.0, 7.5;  // any velocity counts
  CHECK(swing->is_goal(up));
  UnderlyingState tilted(2);
  tilted << M_PI / 6 + 0.01, 0.0;
  CHECK(!swing->is_goal(tilted));

  auto cart = make_env("cartpole", 0);
  UnderlyingState c(4);
  c << M_PI / 8.0, 0, 0, 0;  // pi/8 > pi/10
  CHECK(!cart->is_goal(c));
  c[0] = M_PI / 12.0;
  CHECK(cart->is_goal(c));

  auto three = make_env("threepole", 0);
  UnderlyingState t3 = UnderlyingState::Zero(6);
  t3 << 0.05, 0.05, 0.05, 0, 0, 0;  // sum 0.15 < pi/6
  CHECK(three->is_goal(t3));
  t3 << 1.0, 1.0, 1.0, 0, 0, 0;
  CHECK(!three->is_goal(t3));
}

TEST_CASE("action clipping: step(s, a) equals step(s, clip(a))") {
  for (const char* name : {"planar", "swingup", "cartpole", "threepole"}) {
    auto env = make_env(name, 0);
    Rng rng(11);
    UnderlyingState s = env->sample_uniform_state(rng);
    VecF wild = rng.uniform_vec<float>(env->spec().action_dim, -100.0, 100.0);
    bool clipped = false;
    VecF clamped = clip_action(env->spec(), wild, &clipped);
    StepCounter counter;
    StepOutput o1 = step(*env, s, wild, &counter);
    StepOutput o2 = step(*env, s, clamped);
    CHECK((o1.next - o2.next).cwiseAbs().maxCoeff() == 0.0);
    if (clipped) CHECK(counter.clip_events == 1);
  }
}

TEST_CASE("non-finite actions are rejected") {
  auto env = make_env("swingup", 0);
  UnderlyingState s(2);
  s << 1.0, 0.0;
  VecF bad(1);
  bad << std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(step(*env, s, bad), InputError);
}

TEST_CASE("planar rendering: one agent blob that translates with the agent") {
  auto env = make_env("planar", 0);
  UnderlyingState base(4);
  base << 20.5, 6.5, 37.5, 37.5;
  // blob isolation: difference against an off-screen agent
  Frame background = env->render((VecD(4) << -100, -100, 37.5, 37.5).finished());
  Frame f1 = env->render(base);
  UnderlyingState moved = base;
  moved[0] += 3.0;  // integer pixel shifts translate the mask exactly
  moved[1] += 5.0;
  Frame f2 = env->render(moved);

  int blob1 = 0, blob2 = 0;
  const int w = env->spec().width;
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      bool a1 = f1[y * w + x] > 0.5f && background[y * w + x] < 0.5f;
      bool a2 = f2[y * w + x] > 0.5f && background[y * w + x] < 0.5f;
      if (a1) ++blob1;
      if (a2) ++blob2;
      if (a1) CHECK(f2[(y + 3) * w + (x + 5)] > 0.5f);
    }
  CHECK(blob1 > 0);
  CHECK(blob1 == blob2);
}

TEST_CASE("stacked observations duplicate the frame at reset and chain afterwards") {
  auto env = make_env("swingup", 0);
  Rng rng(5);
  UnderlyingState s = env->initial_state(rng);
  Observation at_reset = observe_static(*env, s);
  int fp = env->spec().frame_pixels();
  CHECK((at_reset.pixels.head(fp) - at_reset.pixels.tail(fp)).cwiseAbs().maxCoeff() == 0.0f);

  VecF a(1);
  a << 1.0f;
  StepOutput o = step(*env, s, a);
  CHECK((o.obs.pixels.head(fp) - env->render(s)).cwiseAbs().maxCoeff() == 0.0f);
  CHECK((o.obs.pixels.tail(fp) - env->render(o.next)).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("biased sampling hits the region with frequency p") {
  struct Case {
    const char* name;
    double p;
  };
  for (const Case& c : {Case{"planar", 0.5}, Case{"swingup", 0.95}, Case{"cartpole", 0.8},
                        Case{"threepole", 0.2}}) {
    auto env = make_env(c.name, 0);
    CHECK(env->spec().default_bias_p == doctest::Approx(c.p));
    Rng rng(17);
    int inside = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i) {
      UnderlyingState s = rng.uniform() < c.p ? env->sample_biased_state(rng)
                                              : env->sample_complement_state(rng);
      if (env->in_biased_region(s)) ++inside;
    }
    double frac = double(inside) / n;
    CHECK(std::abs(frac - c.p) <= 0.02);
  }
}

TEST_CASE("uniform sampling matches the region's natural measure on planar") {
  // biased box [5,35]^2 covers ~56% of the free area; Monte-Carlo oracle
  auto env = make_env("planar", 0);
  Rng rng(23);
  int inside = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i)
    if (env->in_biased_region(env->sample_uniform_state(rng))) ++inside;
  double frac = double(inside) / n;

  Rng rng2(24);
  int ref = 0, kept = 0;
  while (kept < n) {
    double y = rng2.uniform(1.5, 38.5), x = rng2.uniform(1.5, 38.5);
    if (!planar_position_free(y, x)) continue;
    ++kept;
    if (y >= 5 && y <= 35 && x >= 5 && x <= 35) ++ref;
  }
  CHECK(std::abs(frac - double(ref) / n) < 0.01);
}

TEST_CASE("sample_dataset builds triplets through the true dynamics") {
  auto env = make_env("planar", 3);
  Rng rng(29);
  StepCounter counter;
  auto data = sample_dataset(*env, 32, SampleMode::kUniform, 0.5, rng, &counter);
  CHECK(data.size() == 32);
  CHECK(counter.steps == 32);
  CHECK(data[0].x.pixels.size() == env->spec().obs_dim());
  CHECK(data[0].x_goal.pixels.size() == env->spec().obs_dim());
  CHECK(data[0].a.size() == 2);

  CHECK_THROWS_AS(sample_dataset(*env, 0, SampleMode::kUniform, 0.5, rng), InputError);
  CHECK_THROWS_AS(sample_dataset(*env, 10, SampleMode::kUniform, 1.5, rng), InputError);
  CHECK_THROWS_AS(
      sample_dataset(*env, 1 << 26, SampleMode::kUniform, 0.5, rng, nullptr, std::size_t(1) << 20),
      ResourceError);
}

TEST_CASE("collect_with_policy: constant actions reproduce the step chain") {
  auto env = make_env("planar", 7);
  VecF constant(2);
  constant << 1.0f, 0.5f;
  Rng rng(31);
  StepCounter counter;
  auto data = collect_with_policy(
      *env, [&](const Observation&) { return constant; }, 90, rng, &counter);
  CHECK(int(data.size()) == 90);
  CHECK(counter.steps == 90);

  // replay the first episode: same stream, plain step() composition
  Rng rng2(31);
  UnderlyingState s = env->initial_state(rng2);
  for (int t = 0; t < env->spec().horizon; ++t) {
    UnderlyingState next = env->step_state(s, constant);
    CHECK((data[std::size_t(t)].x_next.pixels.tail(env->spec().frame_pixels()) -
           env->render(next))
              .cwiseAbs()
              .maxCoeff() == 0.0f);
    s = next;
  }

  auto bad = [&](const Observation&) {
    VecF v(2);
    v << std::numeric_limits<float>::infinity(), 0.0f;
    return v;
  };
  Rng rng3(1);
  CHECK_THROWS_AS(collect_with_policy(*env, bad, 4, rng3), InputError);
}

TEST_CASE("dataset files round-trip bit-exactly") {
  auto env = make_env("swingup", 5);
  Rng rng(37);
  auto data = sample_dataset(*env, 8, SampleMode::kBiased, 0.95, rng);
  std::string dir = "/tmp/carl_test_dataset";
  std::filesystem::remove_all(dir);
  save_dataset(dir, *env, data, SampleMode::kBiased, 0.95);
  std::string env_name;
  auto loaded = load_dataset(dir, &env_name);
  CHECK(env_name == "swingup");
  CHECK(loaded.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK((loaded[i].x.pixels - data[i].x.pixels).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((loaded[i].a - data[i].a).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((loaded[i].x_next.pixels - data[i].x_next.pixels).cwiseAbs().maxCoeff() == 0.0f);
    CHECK((loaded[i].x_goal.pixels - data[i].x_goal.pixels).cwiseAbs().maxCoeff() == 0.0f);
  }
}

TEST_CASE("golden frames") {
  namespace fs = std::filesystem;
  fs::path dir = CARL_GOLDEN_DIR;
  fs::create_directories(dir);
  struct Fixture {
    const char* name;
    UnderlyingState state;
  };
  std::vector<Fixture> fixtures;
  fixtures.push_back({"planar", (VecD(4) << 20.5, 6.5, 37.5, 37.5).finished()});
  fixtures.push_back({"swingup", (VecD(2) << 1.0, 0.0).finished()});
  fixtures.push_back({"cartpole", (VecD(4) << 0.3, 0.0, 0.5, 0.0).finished()});
  fixtures.push_back(
      {"threepole", (VecD(6) << M_PI, 2.0 * M_PI / 3.0, M_PI / 3.0, 0, 0, 0).finished()});
  for (const auto& f : fixtures) {
    auto env = make_env(f.name, 0);
    Frame frame = env->render(f.state);
    fs::path p = dir / (std::string(f.name) + ".png");
    if (!fs::exists(p)) {
      io::write_png_gray(p.string(), env->spec().height, env->spec().width, frame.data());
      MESSAGE("generated golden frame ", p.string());
    }
    int h = 0, w = 0;
    auto bytes = io::read_png_gray(p.string(), &h, &w);
    REQUIRE(h == env->spec().height);
    REQUIRE(w == env->spec().width);
    for (int i = 0; i < int(bytes.size()); ++i) {
      std::uint8_t expect = frame[i] > 0.5f ? 255 : 0;
      CHECK(bytes[std::size_t(i)] == expect);
    }
  }
}
