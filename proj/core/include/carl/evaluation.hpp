#pragma once

#include "carl/envs/dataset.hpp"
#include "carl/lce.hpp"
#include "carl/sac.hpp"

#include <string>
#include <vector>

namespace carl::evalr {

struct EvalReport {
  std::vector<double> per_episode;  // %-goal per episode, in [0,100]
  double mean = 0.0;
  double stderr_episodes = 0.0;
  std::uint64_t env_steps = 0;
  double wall_clock_s = 0.0;
};

// Deterministic-mode rollouts; %-goal = 100 * goal-steps / horizon. Episode i
// uses the seed substream (seed, "eval-episode", i), so reports are
// reproducible given (checkpoint, seed).
EvalReport percent_goal(const envs::Env& env, const envs::ActFn& act_fn, int episodes,
                        int horizon, std::uint64_t seed, envs::StepCounter* counter = nullptr);

// Greedy policy image pi o E: encoder mean, actor mode.
envs::ActFn make_policy(const model::LceF& lce, const sac::SacAgent& agent);

struct ProtocolRow {
  std::uint64_t seed = 0;
  bool failed = false;
  double mean = 0.0;
  double stderr_episodes = 0.0;
  std::uint64_t env_samples = 0;
};

struct ProtocolResult {
  std::vector<ProtocolRow> rows;
  double avg_of_means = 0.0;
  double stderr_over_models = 0.0;  // Table-style: stderr across model means
  int best_index = -1;
  double best_mean = 0.0;
  double best_stderr = 0.0;
};

ProtocolResult aggregate_protocol(const std::vector<ProtocolRow>& rows);
std::string protocol_table(const std::string& env, const std::string& regime,
                           const ProtocolResult& res);

// Planar latent map: grid the valid positions, encode, and emit a scatter
// (PNG) plus the point CSV. Higher-dimensional latents are projected onto
// their first two principal directions.
struct LatentMapResult {
  int points = 0;
  std::string png_path, csv_path;
};
LatentMapResult latent_map(const model::LceF& lce, const envs::Env& env, int grid_density,
                           const std::string& out_prefix);

// %-goal vs env-samples curves with mean +/- standard-error bands across a
// run group (one metrics.csv per seed).
void export_curves(const std::vector<std::string>& run_dirs, const std::string& out_prefix);

}  // namespace carl::evalr
