#pragma once

#include "carl/common.hpp"
#include "carl/rng.hpp"

#include <functional>
#include <memory>
#include <string>

namespace carl::envs {

enum class EnvName { kPlanar, kSwingup, kCartpole, kThreepole };

EnvName env_name_from_string(const std::string& s);
std::string to_string(EnvName n);

struct EnvSpec {
  EnvName name = EnvName::kPlanar;
  int frames = 1, height = 40, width = 40;
  int action_dim = 2;
  int state_dim = 2;
  int horizon = 40;
  VecF action_low, action_high;
  double dt = 1.0;
  double default_bias_p = 0.5;

  int frame_pixels() const { return height * width; }
  int obs_dim() const { return frames * height * width; }
};

// Env-specific physical coordinates. Never fed to learning code directly;
// only renderings and goal predicates see it.
using UnderlyingState = VecD;

using Frame = VecF;  // height*width, binary intensities in {0,1}

struct Observation {
  VecF pixels;       // frames*height*width
  VecF goal_pixels;  // same shape; may be left empty inside stored triplets
};

struct Triplet {
  Observation x;
  VecF a;
  Observation x_next;
  Observation x_goal;
};

// Deterministic simulator. Dynamics/rendering are pure functions of
// (state, action); every random draw goes through an explicit Rng so parallel
// workers can own independent streams.
class Env {
 public:
  virtual ~Env() = default;

  const EnvSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

  // episode start (randomized per the evaluation protocol where applicable)
  virtual UnderlyingState initial_state(Rng& rng) const = 0;
  virtual UnderlyingState sample_uniform_state(Rng& rng) const = 0;
  // biased-region draw and its complement (complement excludes the region)
  virtual UnderlyingState sample_biased_state(Rng& rng) const = 0;
  virtual UnderlyingState sample_complement_state(Rng& rng) const = 0;
  virtual bool in_biased_region(const UnderlyingState& s) const = 0;

  // one dt of the underlying dynamics; action already clipped
  virtual UnderlyingState step_state(const UnderlyingState& s, const VecF& a) const = 0;
  virtual Frame render(const UnderlyingState& s) const = 0;
  virtual bool is_goal(const UnderlyingState& s) const = 0;
  // state whose rendering is the "previous frame" of s (velocity extrapolated
  // one dt backwards); identity for static scenes
  virtual UnderlyingState backstep(const UnderlyingState& s) const = 0;
  // goal configuration paired with s (fixed for all envs except planar, where
  // the goal rides along inside the state)
  virtual UnderlyingState goal_state_for(const UnderlyingState& s) const = 0;

 protected:
  EnvSpec spec_;
  std::uint64_t seed_ = 0;
};

struct StepOutput {
  UnderlyingState next;
  Observation obs;
  bool clipped = false;
};

// Tallies of environment interaction; trainers assert exact budgets against
// these (spec'd sample accounting).
struct StepCounter {
  std::uint64_t steps = 0;
  std::uint64_t clip_events = 0;
};

VecF clip_action(const EnvSpec& spec, const VecF& a, bool* clipped);

// Applies the dynamics and renders the stacked observation (previous frame =
// rendering of the pre-step state). Throws InputError on non-finite actions.
StepOutput step(const Env& env, const UnderlyingState& s, const VecF& a,
                StepCounter* counter = nullptr);

// Stacked observation from an explicit (previous, current) pair.
Observation observe(const Env& env, const UnderlyingState& prev, const UnderlyingState& cur);
// Both stacked frames equal render(s); used at reset and for goal images.
Observation observe_static(const Env& env, const UnderlyingState& s);

std::unique_ptr<Env> make_env(EnvName name, std::uint64_t seed);
std::unique_ptr<Env> make_env(const std::string& name, std::uint64_t seed);

// ---- shared raster helpers (binary masks, no anti-aliasing) ----
void draw_disc(Frame& f, int h, int w, double cy, double cx, double radius);
void draw_rod(Frame& f, int h, int w, double y0, double x0, double y1, double x1,
              double half_width);

// planar map geometry helper (true when the position collides with nothing);
// used by the latent-map grid and tests
bool planar_position_free(double y, double x);

inline double wrap_angle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a <= -M_PI) a += 2.0 * M_PI;
  return a;
}

}  // namespace carl::envs
