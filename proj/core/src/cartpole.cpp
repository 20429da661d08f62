#include "carl/envs/env.hpp"

#include <cmath>

namespace carl::envs {

// Pole balancing on a cart from two stacked 80x80 frames.
// State = (theta, theta_dot, cart_x, cart_xdot), theta from upright.
// Continuous force in [-10, 10]; explicit Euler at dt = 0.02; the cart stops
// at the track boundary.
namespace {

constexpr double kDt = 0.02;
constexpr double kGravity = 9.8;
constexpr double kMassCart = 1.0;
constexpr double kMassPole = 0.1;
constexpr double kHalfLength = 0.5;
constexpr double kMaxForce = 10.0;
constexpr double kTrack = 1.5;       // |cart_x| <= kTrack metres
constexpr double kMaxAngVel = 2.5;
constexpr double kMaxCartVel = 3.0;
constexpr double kGoalAngle = M_PI / 10.0;
constexpr double kStartAngle = M_PI / 6.0;

class CartpoleEnv final : public Env {
 public:
  explicit CartpoleEnv(std::uint64_t seed) {
    seed_ = seed;
    spec_.name = EnvName::kCartpole;
    spec_.frames = 2;
    spec_.height = 80;
    spec_.width = 80;
    spec_.action_dim = 1;
    spec_.state_dim = 4;
    spec_.horizon = 200;
    spec_.action_low = VecF::Constant(1, float(-kMaxForce));
    spec_.action_high = VecF::Constant(1, float(kMaxForce));
    spec_.dt = kDt;
    spec_.default_bias_p = 0.8;
  }

  UnderlyingState initial_state(Rng& rng) const override {
    UnderlyingState s(4);
    s << rng.uniform(-kStartAngle, kStartAngle), rng.uniform(-0.2, 0.2),
        rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2);
    return s;
  }

  UnderlyingState sample_uniform_state(Rng& rng) const override {
    UnderlyingState s(4);
    s << rng.uniform(-kStartAngle, kStartAngle), rng.uniform(-kMaxAngVel, kMaxAngVel),
        rng.uniform(-kTrack, kTrack), rng.uniform(-kMaxCartVel, kMaxCartVel);
    return s;
  }

  // biased: |theta| in [pi/10, pi/6]
  UnderlyingState sample_biased_state(Rng& rng) const override {
    double mag = rng.uniform(kGoalAngle, kStartAngle);
    double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    UnderlyingState s = sample_uniform_state(rng);
    s[0] = sign * mag;
    return s;
  }

  UnderlyingState sample_complement_state(Rng& rng) const override {
    UnderlyingState s = sample_uniform_state(rng);
    s[0] = rng.uniform(-kGoalAngle, kGoalAngle);
    return s;
  }

  bool in_biased_region(const UnderlyingState& s) const override {
    double a = std::abs(s[0]);
    return a >= kGoalAngle && a <= kStartAngle;
  }

  UnderlyingState step_state(const UnderlyingState& s, const VecF& a) const override {
    double th = s[0], thdot = s[1], x = s[2], xdot = s[3];
    double force = double(a[0]);
    double sin_th = std::sin(th), cos_th = std::cos(th);
    double total = kMassCart + kMassPole;
    double temp = (force + kMassPole * kHalfLength * thdot * thdot * sin_th) / total;
    double th_acc = (kGravity * sin_th - cos_th * temp) /
                    (kHalfLength * (4.0 / 3.0 - kMassPole * cos_th * cos_th / total));
    double x_acc = temp - kMassPole * kHalfLength * th_acc * cos_th / total;

    UnderlyingState out(4);
    out[0] = wrap_angle(th + kDt * thdot);
    out[1] = std::clamp(thdot + kDt * th_acc, -kMaxAngVel, kMaxAngVel);
    out[2] = x + kDt * xdot;
    out[3] = std::clamp(xdot + kDt * x_acc, -kMaxCartVel, kMaxCartVel);
    if (out[2] < -kTrack || out[2] > kTrack) {
      out[2] = std::clamp(out[2], -kTrack, kTrack);
      out[3] = 0.0;
    }
    return out;
  }

  Frame render(const UnderlyingState& s) const override {
    Frame f = Frame::Zero(spec_.frame_pixels());
    const double px_per_m = 80.0 / (2.0 * kTrack + 1.0);
    double cart_y = 52.0;
    double cart_x = 40.0 + s[2] * px_per_m;
    // cart body
    draw_rod(f, spec_.height, spec_.width, cart_y, cart_x - 5.0, cart_y, cart_x + 5.0, 3.0);
    // pole, drawn with an exaggerated length so motion is visible
    double pole_len = 24.0;
    double ty = cart_y - pole_len * std::cos(s[0]);
    double tx = cart_x + pole_len * std::sin(s[0]);
    draw_rod(f, spec_.height, spec_.width, cart_y, cart_x, ty, tx, 1.8);
    return f;
  }

  bool is_goal(const UnderlyingState& s) const override {
    return std::abs(wrap_angle(s[0])) <= kGoalAngle;
  }

  UnderlyingState backstep(const UnderlyingState& s) const override {
    UnderlyingState prev = s;
    prev[0] = wrap_angle(s[0] - kDt * s[1]);
    prev[2] = s[2] - kDt * s[3];
    return prev;
  }

  UnderlyingState goal_state_for(const UnderlyingState&) const override {
    return UnderlyingState::Zero(4);
  }
};

}  // namespace

std::unique_ptr<Env> make_cartpole(std::uint64_t seed) {
  return std::make_unique<CartpoleEnv>(seed);
}

}  // namespace carl::envs
