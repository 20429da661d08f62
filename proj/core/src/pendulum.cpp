#include "carl/envs/env.hpp"

#include <cmath>

namespace carl::envs {

// Under-actuated pendulum swing-up from two stacked 48x48 frames.
// State = (theta, theta_dot), theta measured from upright, wrapped to
// (-pi, pi]. Explicit Euler at dt = 0.05 with rod dynamics
// theta_dd = (3g/2l) sin(theta) + 3u/(m l^2); |u| <= 2 keeps it
// under-actuated (a direct lift needs ~mgl/2).
namespace {

constexpr double kDt = 0.05;
constexpr double kGravity = 10.0;
constexpr double kMass = 1.0;
constexpr double kLength = 1.0;
constexpr double kMaxTorque = 2.0;
constexpr double kMaxSpeed = 8.0;
constexpr double kGoalAngle = M_PI / 6.0;

class SwingupEnv final : public Env {
 public:
  explicit SwingupEnv(std::uint64_t seed) {
    seed_ = seed;
    spec_.name = EnvName::kSwingup;
    spec_.frames = 2;
    spec_.height = 48;
    spec_.width = 48;
    spec_.action_dim = 1;
    spec_.state_dim = 2;
    spec_.horizon = 400;
    spec_.action_low = VecF::Constant(1, float(-kMaxTorque));
    spec_.action_high = VecF::Constant(1, float(kMaxTorque));
    spec_.dt = kDt;
    spec_.default_bias_p = 0.95;
  }

  UnderlyingState initial_state(Rng& rng) const override {
    // resting down, jittered inside a small region around the start point
    UnderlyingState s(2);
    s << wrap_angle(M_PI + rng.uniform(-0.2, 0.2)), rng.uniform(-0.1, 0.1);
    return s;
  }

  UnderlyingState sample_uniform_state(Rng& rng) const override {
    UnderlyingState s(2);
    s << rng.uniform(-M_PI, M_PI), rng.uniform(-kMaxSpeed, kMaxSpeed);
    return s;
  }

  // biased: near the resting position, |theta| in [2, pi]
  UnderlyingState sample_biased_state(Rng& rng) const override {
    double mag = rng.uniform(2.0, M_PI);
    double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    UnderlyingState s(2);
    s << wrap_angle(sign * mag), rng.uniform(-kMaxSpeed, kMaxSpeed);
    return s;
  }

  // complement: within 0.5 of upright
  UnderlyingState sample_complement_state(Rng& rng) const override {
    UnderlyingState s(2);
    s << rng.uniform(-0.5, 0.5), rng.uniform(-kMaxSpeed, kMaxSpeed);
    return s;
  }

  bool in_biased_region(const UnderlyingState& s) const override {
    double a = std::abs(wrap_angle(s[0]));
    return a >= 2.0;
  }

  UnderlyingState step_state(const UnderlyingState& s, const VecF& a) const override {
    double th = s[0], thdot = s[1];
    double u = double(a[0]);
    double acc = 3.0 * kGravity / (2.0 * kLength) * std::sin(th) +
                 3.0 * u / (kMass * kLength * kLength);
    double nth = wrap_angle(th + kDt * thdot);
    double nthdot = std::clamp(thdot + kDt * acc, -kMaxSpeed, kMaxSpeed);
    UnderlyingState out(2);
    out << nth, nthdot;
    return out;
  }

  Frame render(const UnderlyingState& s) const override {
    Frame f = Frame::Zero(spec_.frame_pixels());
    double cy = 24.0, cx = 24.0, len = 16.0;
    double ty = cy - len * std::cos(s[0]);
    double tx = cx + len * std::sin(s[0]);
    draw_rod(f, spec_.height, spec_.width, cy, cx, ty, tx, 1.6);
    return f;
  }

  bool is_goal(const UnderlyingState& s) const override {
    return std::abs(wrap_angle(s[0])) <= kGoalAngle;
  }

  UnderlyingState backstep(const UnderlyingState& s) const override {
    UnderlyingState prev = s;
    prev[0] = wrap_angle(s[0] - kDt * s[1]);
    return prev;
  }

  UnderlyingState goal_state_for(const UnderlyingState&) const override {
    UnderlyingState g(2);
    g << 0.0, 0.0;
    return g;
  }
};

}  // namespace

std::unique_ptr<Env> make_swingup(std::uint64_t seed) {
  return std::make_unique<SwingupEnv>(seed);
}

}  // namespace carl::envs
