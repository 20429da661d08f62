#pragma once

#include "carl/envs/dataset.hpp"
#include "carl/evaluation.hpp"
#include "carl/lce.hpp"
#include "carl/losses.hpp"
#include "carl/sac.hpp"

#include "nlohmann/json.hpp"

#include <fstream>
#include <memory>
#include <optional>
#include <string>

namespace carl::train {

struct RunConfig {
  std::string env = "planar";
  losses::Regime regime = losses::Regime::kOffline;

  // environment-sample budgets
  int total_env_samples = 5000;
  int initial_samples = 1024;       // online warm start (uniform random policy)
  int samples_per_iteration = 128;  // online collection per iteration

  // optimization budgets
  int lce_epochs_offline = 40;
  int lce_epochs_per_iteration = 20;
  int sac_steps_offline = 4000;
  int sac_steps_per_iteration = 1000;
  int distill_epochs = 10;
  bool distill_enabled = true;
  int batch_size = 128;

  double lce_lr = 5e-4;
  double l2_coeff = 1e-3;  // L2 regularization on LCE parameters
  bool reinit_lce_each_iteration = false;
  bool next_from_model = true;  // latent batches roll z' out of F rather than E(x')

  losses::LossWeights loss_weights;
  sac::SACConfig sac;

  std::uint64_t seed = 0;
  std::string out_dir = "runs/run0";
  int eval_episodes = 10;       // per evaluation row in metrics.csv
  int eval_every_sac_steps = 0; // 0: only at phase ends
  int checkpoint_every_steps = 0;  // extra mid-phase checkpoints; 0 = off
  double bias_p = -1.0;  // <0: env default; used for biased warm starts
  envs::SampleMode initial_mode = envs::SampleMode::kUniform;

  static RunConfig defaults_for(const std::string& env, losses::Regime regime);
  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
};

// Append-only store of triplets; persisted and reloaded bit-exactly.
class RealBuffer {
 public:
  void append(std::vector<envs::Triplet> batch);
  const std::vector<envs::Triplet>& data() const { return data_; }
  std::size_t size() const { return data_.size(); }
  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  std::vector<envs::Triplet> data_;
};

struct TrainSummary {
  int iterations = 0;
  std::uint64_t env_samples = 0;
  double final_percent_goal = 0.0;
  double last_lce_total = 0.0;
  std::string run_dir;
};

// Orchestrates the offline / online / value-guided regimes, owns all mutable
// training state, and persists enough of it (parameters, optimizer moments,
// random streams, buffers, counters) for bit-exact resumption.
class Trainer {
 public:
  explicit Trainer(RunConfig cfg);
  static Trainer resume(const std::string& run_dir);

  TrainSummary run();

  const model::LceF& lce() const { return *lce_; }
  const sac::SacAgent& agent() const { return *agent_; }
  const RealBuffer& buffer() const { return buffer_; }
  const envs::Env& env() const { return *env_; }
  const RunConfig& config() const { return cfg_; }
  std::uint64_t train_steps_consumed() const { return train_counter_.steps; }

  // exposed for tests
  double lce_train_steps(int steps, losses::Regime mode);
  void save_checkpoint(const std::string& tag);

 private:
  enum class Phase { kCollect, kLce, kDistill, kSac, kCollectIter, kDone };

  Trainer() = default;
  void open_metrics(bool truncate_to_header);
  void init_fresh();
  void collect_initial();
  void run_offline();
  void run_online();
  double lce_step(losses::Regime mode);
  void sac_phase(int steps);
  void distill_phase();
  void collect_phase(int n);
  void eval_row();
  void write_lce_row(const losses::LossReport& rep);
  void write_sac_row(const sac::SacAgent::UpdateStats& st);
  Eigen::RowVectorXf value_weights_for(const std::vector<const envs::Triplet*>& batch);
  std::vector<const envs::Triplet*> draw_batch();
  void load_checkpoint(const std::string& run_dir);

  RunConfig cfg_;
  std::unique_ptr<envs::Env> env_;
  envs::StepCounter train_counter_, eval_counter_;
  RealBuffer buffer_;
  std::optional<model::LceF> lce_, lce_prev_;
  std::optional<sac::SacAgent> agent_, agent_prev_;
  nn::Adam<float> lce_opt_;
  std::optional<sac::LatentBuffer> latent_buffer_;

  Rng rng_data_, rng_init_, rng_loss_, rng_weights_, rng_sac_, rng_collect_;
  int iteration_ = 0;
  long lce_step_in_phase_ = 0, sac_step_in_phase_ = 0;
  Phase phase_ = Phase::kCollect;
  long metrics_lines_ = 0;
  double last_eval_ = 0.0;
  std::ofstream metrics_;
};

struct DistillStats {
  double initial = 0.0;
  double final_ = 0.0;
};

// Gradient descent on the action-marginal KL between the new policy image
// (pi_new o E_new) and the previous iteration's image (pi_old o E_old),
// estimated by conditional KL at shared encoder draws.
DistillStats policy_distill(sac::SacAgent& actor_new, const model::LceF& e_new,
                            const sac::SacAgent& actor_old, const model::LceF& e_old,
                            const std::vector<VecF>& observations, const std::vector<VecF>& goals,
                            int epochs, int batch_size, Rng& rng);

// Desk-scale reproduction protocol: trains n_models independent seeds and
// evaluates each on n_tasks episodes. Per-model failures are recorded and the
// protocol continues.
evalr::ProtocolResult run_protocol(const RunConfig& base_cfg, int n_models, int n_tasks,
                                   int parallelism = 2);

}  // namespace carl::train
