#include "carl/envs/env.hpp"

#include <array>
#include <cmath>

namespace carl::envs {

// Agent navigating a 40x40 map with six circular obstacles arranged in two
// columns. State = (y, x, goal_y, goal_x); actions displace the agent
// directly, moves that would collide are cancelled. The goal rides inside the
// state so the goal predicate stays a pure function of UnderlyingState.
namespace {

constexpr double kSize = 40.0;
constexpr double kAgentRadius = 1.5;
constexpr double kObstacleRadius = 2.5;
constexpr double kMaxStep = 5.0;
constexpr double kGoalDistance = 5.0;

constexpr std::array<std::array<double, 2>, 6> kObstacles = {{
    {8.0, 13.0}, {20.0, 13.0}, {32.0, 13.0}, {8.0, 27.0}, {20.0, 27.0}, {32.0, 27.0},
}};

// start corner and the three candidate goal corners (y, x)
constexpr std::array<double, 2> kStart = {2.5, 2.5};
constexpr std::array<std::array<double, 2>, 3> kGoals = {{
    {2.5, 37.5}, {37.5, 2.5}, {37.5, 37.5},
}};

bool position_free(double y, double x) {
  if (y < kAgentRadius || y > kSize - kAgentRadius) return false;
  if (x < kAgentRadius || x > kSize - kAgentRadius) return false;
  for (const auto& o : kObstacles) {
    double dy = y - o[0], dx = x - o[1];
    double min_d = kObstacleRadius + kAgentRadius;
    if (dy * dy + dx * dx < min_d * min_d) return false;
  }
  return true;
}

class PlanarEnv final : public Env {
 public:
  explicit PlanarEnv(std::uint64_t seed) {
    seed_ = seed;
    spec_.name = EnvName::kPlanar;
    spec_.frames = 1;
    spec_.height = 40;
    spec_.width = 40;
    spec_.action_dim = 2;
    spec_.state_dim = 4;  // position plus active goal position
    spec_.horizon = 40;
    spec_.action_low = VecF::Constant(2, float(-kMaxStep));
    spec_.action_high = VecF::Constant(2, float(kMaxStep));
    spec_.dt = 1.0;
    spec_.default_bias_p = 0.5;
  }

  UnderlyingState initial_state(Rng& rng) const override {
    const auto& goal = kGoals[rng.index(3)];
    UnderlyingState s(4);
    s << kStart[0], kStart[1], goal[0], goal[1];
    return s;
  }

  UnderlyingState sample_uniform_state(Rng& rng) const override {
    UnderlyingState s(4);
    double y, x;
    do {
      y = rng.uniform(kAgentRadius, kSize - kAgentRadius);
      x = rng.uniform(kAgentRadius, kSize - kAgentRadius);
    } while (!position_free(y, x));
    const auto& goal = kGoals[rng.index(3)];
    s << y, x, goal[0], goal[1];
    return s;
  }

  // biased region: the central 30x30 box [5,35]^2 (contains no goal corner)
  UnderlyingState sample_biased_state(Rng& rng) const override {
    UnderlyingState s(4);
    double y, x;
    do {
      y = rng.uniform(5.0, 35.0);
      x = rng.uniform(5.0, 35.0);
    } while (!position_free(y, x));
    const auto& goal = kGoals[rng.index(3)];
    s << y, x, goal[0], goal[1];
    return s;
  }

  UnderlyingState sample_complement_state(Rng& rng) const override {
    UnderlyingState s;
    do {
      s = sample_uniform_state(rng);
    } while (in_biased_region(s));
    return s;
  }

  bool in_biased_region(const UnderlyingState& s) const override {
    return s[0] >= 5.0 && s[0] <= 35.0 && s[1] >= 5.0 && s[1] <= 35.0;
  }

  UnderlyingState step_state(const UnderlyingState& s, const VecF& a) const override {
    double ny = std::clamp(s[0] + double(a[0]), kAgentRadius, kSize - kAgentRadius);
    double nx = std::clamp(s[1] + double(a[1]), kAgentRadius, kSize - kAgentRadius);
    UnderlyingState out = s;
    if (position_free(ny, nx)) {
      out[0] = ny;
      out[1] = nx;
    }
    return out;
  }

  Frame render(const UnderlyingState& s) const override {
    Frame f = Frame::Zero(spec_.frame_pixels());
    for (const auto& o : kObstacles)
      draw_disc(f, spec_.height, spec_.width, o[0], o[1], kObstacleRadius);
    draw_disc(f, spec_.height, spec_.width, s[0], s[1], kAgentRadius);
    return f;
  }

  bool is_goal(const UnderlyingState& s) const override {
    double dy = s[0] - s[2], dx = s[1] - s[3];
    return std::sqrt(dy * dy + dx * dx) <= kGoalDistance;
  }

  UnderlyingState backstep(const UnderlyingState& s) const override { return s; }

  UnderlyingState goal_state_for(const UnderlyingState& s) const override {
    UnderlyingState g(4);
    g << s[2], s[3], s[2], s[3];
    return g;
  }

  static bool free_at(double y, double x) { return position_free(y, x); }
};

}  // namespace

std::unique_ptr<Env> make_planar(std::uint64_t seed) {
  return std::make_unique<PlanarEnv>(seed);
}

// exposed for the latent-map grid and tests
bool planar_position_free(double y, double x) { return position_free(y, x); }

}  // namespace carl::envs
