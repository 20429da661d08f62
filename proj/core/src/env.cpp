#include "carl/envs/env.hpp"

#include <cmath>

namespace carl::envs {

std::unique_ptr<Env> make_planar(std::uint64_t seed);
std::unique_ptr<Env> make_swingup(std::uint64_t seed);
std::unique_ptr<Env> make_cartpole(std::uint64_t seed);
std::unique_ptr<Env> make_threepole(std::uint64_t seed);

EnvName env_name_from_string(const std::string& s) {
  if (s == "planar") return EnvName::kPlanar;
  if (s == "swingup") return EnvName::kSwingup;
  if (s == "cartpole") return EnvName::kCartpole;
  if (s == "threepole") return EnvName::kThreepole;
  throw ConfigError("unknown environment: " + s);
}

std::string to_string(EnvName n) {
  switch (n) {
    case EnvName::kPlanar: return "planar";
    case EnvName::kSwingup: return "swingup";
    case EnvName::kCartpole: return "cartpole";
    case EnvName::kThreepole: return "threepole";
  }
  return "?";
}

VecF clip_action(const EnvSpec& spec, const VecF& a, bool* clipped) {
  if (a.size() != spec.action_dim) throw InputError("action dimension mismatch");
  VecF out = a;
  bool any = false;
  for (int i = 0; i < a.size(); ++i) {
    if (!std::isfinite(double(a[i]))) throw InputError("non-finite action component");
    float lo = spec.action_low[i], hi = spec.action_high[i];
    if (out[i] < lo) {
      out[i] = lo;
      any = true;
    } else if (out[i] > hi) {
      out[i] = hi;
      any = true;
    }
  }
  if (clipped) *clipped = any;
  return out;
}

StepOutput step(const Env& env, const UnderlyingState& s, const VecF& a, StepCounter* counter) {
  bool clipped = false;
  VecF ac = clip_action(env.spec(), a, &clipped);
  StepOutput out;
  out.clipped = clipped;
  out.next = env.step_state(s, ac);
  out.obs = observe(env, s, out.next);
  if (counter) {
    ++counter->steps;
    if (clipped) ++counter->clip_events;
  }
  return out;
}

Observation observe(const Env& env, const UnderlyingState& prev, const UnderlyingState& cur) {
  const EnvSpec& sp = env.spec();
  Observation obs;
  obs.pixels.resize(sp.obs_dim());
  if (sp.frames == 1) {
    obs.pixels = env.render(cur);
  } else {
    obs.pixels.head(sp.frame_pixels()) = env.render(prev);
    obs.pixels.tail(sp.frame_pixels()) = env.render(cur);
  }
  return obs;
}

Observation observe_static(const Env& env, const UnderlyingState& s) {
  return observe(env, s, s);
}

std::unique_ptr<Env> make_env(EnvName name, std::uint64_t seed) {
  switch (name) {
    case EnvName::kPlanar: return make_planar(seed);
    case EnvName::kSwingup: return make_swingup(seed);
    case EnvName::kCartpole: return make_cartpole(seed);
    case EnvName::kThreepole: return make_threepole(seed);
  }
  throw ConfigError("unknown environment enum");
}

std::unique_ptr<Env> make_env(const std::string& name, std::uint64_t seed) {
  return make_env(env_name_from_string(name), seed);
}

void draw_disc(Frame& f, int h, int w, double cy, double cx, double radius) {
  const double r2 = radius * radius;
  int y0 = std::max(0, int(std::floor(cy - radius)));
  int y1 = std::min(h - 1, int(std::ceil(cy + radius)));
  int x0 = std::max(0, int(std::floor(cx - radius)));
  int x1 = std::min(w - 1, int(std::ceil(cx + radius)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      double dy = (y + 0.5) - cy, dx = (x + 0.5) - cx;
      if (dy * dy + dx * dx <= r2) f[y * w + x] = 1.0f;
    }
}

void draw_rod(Frame& f, int h, int w, double y0, double x0, double y1, double x1,
              double half_width) {
  double vy = y1 - y0, vx = x1 - x0;
  double len2 = vy * vy + vx * vx;
  double pad = half_width + 1.0;
  int ylo = std::max(0, int(std::floor(std::min(y0, y1) - pad)));
  int yhi = std::min(h - 1, int(std::ceil(std::max(y0, y1) + pad)));
  int xlo = std::max(0, int(std::floor(std::min(x0, x1) - pad)));
  int xhi = std::min(w - 1, int(std::ceil(std::max(x0, x1) + pad)));
  for (int y = ylo; y <= yhi; ++y)
    for (int x = xlo; x <= xhi; ++x) {
      double py = (y + 0.5) - y0, px = (x + 0.5) - x0;
      double t = len2 > 0.0 ? std::clamp((py * vy + px * vx) / len2, 0.0, 1.0) : 0.0;
      double dy = py - t * vy, dx = px - t * vx;
      if (dy * dy + dx * dx <= half_width * half_width) f[y * w + x] = 1.0f;
    }
}

}  // namespace carl::envs
