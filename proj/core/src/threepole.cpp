#include "carl/envs/env.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace carl::envs {

// Three-link manipulator, swing up and balance, from two stacked 80x80
// frames. State = (q1..q3, qd1..qd3): relative joint angles (from upright for
// the first link) and velocities. Dynamics are the Euler-Lagrange equations
// of a chain of point-mass links, integrated with explicit Euler.
namespace {

constexpr int kLinks = 3;
constexpr double kDt = 0.02;
constexpr double kGravity = 10.0;
constexpr double kMass = 1.0;
constexpr double kLength = 1.0;
constexpr double kMaxTorque = 4.0;
constexpr double kMaxSpeed = 6.0;
constexpr double kGoalAngle = M_PI / 6.0;

class ThreepoleEnv final : public Env {
 public:
  explicit ThreepoleEnv(std::uint64_t seed) {
    seed_ = seed;
    spec_.name = EnvName::kThreepole;
    spec_.frames = 2;
    spec_.height = 80;
    spec_.width = 80;
    spec_.action_dim = 3;
    spec_.state_dim = 6;
    spec_.horizon = 200;
    spec_.action_low = VecF::Constant(3, float(-kMaxTorque));
    spec_.action_high = VecF::Constant(3, float(kMaxTorque));
    spec_.dt = kDt;
    spec_.default_bias_p = 0.2;
  }

  UnderlyingState initial_state(Rng&) const override {
    UnderlyingState s = UnderlyingState::Zero(6);
    s[0] = M_PI;
    s[1] = 2.0 * M_PI / 3.0;
    s[2] = M_PI / 3.0;
    return s;
  }

  UnderlyingState sample_uniform_state(Rng& rng) const override {
    UnderlyingState s(6);
    for (int i = 0; i < kLinks; ++i) s[i] = rng.uniform(-M_PI, M_PI);
    for (int i = 0; i < kLinks; ++i) s[kLinks + i] = rng.uniform(-kMaxSpeed, kMaxSpeed);
    return s;
  }

  // biased: joint box around upright (pi/2, pi/3, pi/6)
  UnderlyingState sample_biased_state(Rng& rng) const override {
    UnderlyingState s(6);
    s[0] = rng.uniform(-M_PI / 2.0, M_PI / 2.0);
    s[1] = rng.uniform(-M_PI / 3.0, M_PI / 3.0);
    s[2] = rng.uniform(-M_PI / 6.0, M_PI / 6.0);
    for (int i = 0; i < kLinks; ++i) s[kLinks + i] = rng.uniform(-kMaxSpeed, kMaxSpeed);
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
    return std::abs(wrap_angle(s[0])) <= M_PI / 2.0 &&
           std::abs(wrap_angle(s[1])) <= M_PI / 3.0 &&
           std::abs(wrap_angle(s[2])) <= M_PI / 6.0;
  }

  UnderlyingState step_state(const UnderlyingState& s, const VecF& a) const override {
    // absolute angles and velocities
    VecD phi(kLinks), phidot(kLinks);
    double acc_q = 0.0, acc_qd = 0.0;
    for (int i = 0; i < kLinks; ++i) {
      acc_q += s[i];
      acc_qd += s[kLinks + i];
      phi[i] = acc_q;
      phidot[i] = acc_qd;
    }

    // chain mass matrix for point masses at link tips
    auto tail_mass = [](int i) { return kMass * double(kLinks - i); };
    MatD M(kLinks, kLinks);
    VecD C = VecD::Zero(kLinks), G(kLinks);
    for (int i = 0; i < kLinks; ++i) {
      for (int j = 0; j < kLinks; ++j) {
        double m = tail_mass(std::max(i, j));
        M(i, j) = m * kLength * kLength * std::cos(phi[i] - phi[j]);
        C[i] += m * kLength * kLength * std::sin(phi[i] - phi[j]) * phidot[j] * phidot[j];
      }
      G[i] = -tail_mass(i) * kGravity * kLength * std::sin(phi[i]);
      M(i, i) += 1e-9;  // keep the solve well posed at aligned links
    }
    // joint torques tau map to absolute generalized forces Q_i = tau_i - tau_{i+1}
    VecD Q(kLinks);
    for (int i = 0; i < kLinks; ++i)
      Q[i] = double(a[i]) - (i + 1 < kLinks ? double(a[i + 1]) : 0.0);

    VecD phidd = M.ldlt().solve(Q - C - G);

    VecD nphi(kLinks), nphidot(kLinks);
    for (int i = 0; i < kLinks; ++i) {
      nphi[i] = phi[i] + kDt * phidot[i];
      nphidot[i] = phidot[i] + kDt * phidd[i];
    }
    UnderlyingState out(6);
    double prev_q = 0.0, prev_qd = 0.0;
    for (int i = 0; i < kLinks; ++i) {
      out[i] = wrap_angle(nphi[i] - prev_q);
      double qd = nphidot[i] - prev_qd;
      out[kLinks + i] = std::clamp(qd, -kMaxSpeed, kMaxSpeed);
      prev_q = nphi[i];
      prev_qd = nphidot[i];
    }
    return out;
  }

  Frame render(const UnderlyingState& s) const override {
    Frame f = Frame::Zero(spec_.frame_pixels());
    double y = 40.0, x = 40.0, acc = 0.0;
    const double link_px = 11.0;
    for (int i = 0; i < kLinks; ++i) {
      acc += s[i];
      double ny = y - link_px * std::cos(acc);
      double nx = x + link_px * std::sin(acc);
      draw_rod(f, spec_.height, spec_.width, y, x, ny, nx, 1.8);
      y = ny;
      x = nx;
    }
    return f;
  }

  bool is_goal(const UnderlyingState& s) const override {
    return std::abs(wrap_angle(s[0] + s[1] + s[2])) <= kGoalAngle;
  }

  UnderlyingState backstep(const UnderlyingState& s) const override {
    UnderlyingState prev = s;
    for (int i = 0; i < kLinks; ++i) prev[i] = wrap_angle(s[i] - kDt * s[kLinks + i]);
    return prev;
  }

  UnderlyingState goal_state_for(const UnderlyingState&) const override {
    return UnderlyingState::Zero(6);
  }
};

}  // namespace

std::unique_ptr<Env> make_threepole(std::uint64_t seed) {
  return std::make_unique<ThreepoleEnv>(seed);
}

}  // namespace carl::envs
