#pragma once

#include "carl/envs/env.hpp"

#include <functional>
#include <string>
#include <vector>

namespace carl::envs {

enum class SampleMode { kUniform, kBiased };

SampleMode sample_mode_from_string(const std::string& s);
std::string to_string(SampleMode m);

// Triplet generation per the data-generation procedure: draw a state (in
// biased mode a fraction p from the biased region, the rest from its
// complement), a uniform valid action, and the true dynamics step. The
// stacked "previous" frame of x_t comes from backstep().
std::vector<Triplet> sample_dataset(const Env& env, int n, SampleMode mode, double p, Rng& rng,
                                    StepCounter* counter = nullptr,
                                    std::size_t memory_cap_bytes = std::size_t(2) << 30);

// Seeded from the environment handle (stream "dataset").
std::vector<Triplet> sample_dataset(const Env& env, int n, SampleMode mode, double p);

using ActFn = std::function<VecF(const Observation&)>;

// Rollouts from reset states following act_fn; episodes truncate at the
// horizon; exactly n transitions are gathered and counted.
std::vector<Triplet> collect_with_policy(const Env& env, const ActFn& act_fn, int n, Rng& rng,
                                         StepCounter* counter = nullptr);

// Binary record file plus JSON sidecar manifest (env, seed, mode, p, n, dt).
void save_dataset(const std::string& dir, const Env& env, const std::vector<Triplet>& data,
                  SampleMode mode, double p);
std::vector<Triplet> load_dataset(const std::string& dir, std::string* env_name = nullptr);

// Attaches per-sample goal frames to an observation for policy consumption.
Observation with_goal(const Observation& x, const Observation& goal);

}  // namespace carl::envs
