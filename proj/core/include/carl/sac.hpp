#pragma once

#include "carl/lce.hpp"
#include "carl/losses.hpp"

#include <deque>
#include <vector>

// Model-based soft actor-critic operating entirely in latent space. Nothing
// in this module reads pixels; build_latent_batch is the single place where
// observations enter, through the encoder.
namespace carl::sac {

using S = float;

enum class RewardForm { kQuadratic, kNegDistance };

RewardForm reward_form_from_string(const std::string& s);
std::string to_string(RewardForm f);

struct SACConfig {
  double gamma = 0.99;
  double polyak_rate = 0.005;
  std::size_t buffer_capacity = 1000000;
  int batch_size = 128;
  int rollout_k = 5;
  double critic_lr = 0.001;
  double actor_lr = 0.0005;
  double explore_sigma0 = 1.0;
  double sigma_decay = 0.999;
  double sigma_min = 0.025;
  double alpha0 = 0.2;
  double alpha_decay = 0.99995;
  double alpha_min = 0.01;
  double reward_kappa = 50.0;
  RewardForm reward_form = RewardForm::kQuadratic;
  bool bootstrap = false;        // append gamma^{k+1} min target-Q after the rollout
  bool goal_conditioned = true;  // critics/actor also see z_goal
  int hidden = 256;

  void validate() const;
};

struct LatentTransition {
  VecF z;
  VecF a;
  VecF z_next;
  float r = 0.0f;
  VecF z_goal;
};

// One writer, many readers; ring buffer.
class LatentBuffer {
 public:
  explicit LatentBuffer(std::size_t capacity) : capacity_(capacity) {}
  void add(LatentTransition t) {
    if (data_.size() == capacity_) data_.pop_front();
    data_.push_back(std::move(t));
  }
  std::size_t size() const { return data_.size(); }
  const LatentTransition& at(std::size_t i) const { return data_[i]; }
  std::vector<LatentTransition> sample(int n, Rng& rng) const {
    std::vector<LatentTransition> out;
    out.reserve(std::size_t(n));
    for (int i = 0; i < n; ++i) out.push_back(data_[rng.index(data_.size())]);
    return out;
  }

 private:
  std::size_t capacity_;
  std::deque<LatentTransition> data_;
};

float latent_reward(const VecF& z_next, const VecF& z_goal, const VecF& a, const SACConfig& cfg);

class SacAgent {
 public:
  static SacAgent create(int n_z, int action_dim, const VecF& action_low,
                         const VecF& action_high, const SACConfig& cfg, Rng& rng);

  // Squashed-Gaussian policy. Deterministic mode returns the distribution
  // mode and is invariant to the exploration schedule.
  VecF act(const VecF& z_in, bool explore, Rng* rng = nullptr) const;
  MatF act_batch(const MatF& z_in, bool deterministic, Rng* rng) const;

  // k-step latent-rollout return; first reward comes from the transition
  // itself, subsequent actions follow the live actor.
  float q_target(const model::LceF& m, const LatentTransition& t, Rng& rng) const;
  Eigen::RowVectorXf q_target_batch(const model::LceF& m,
                                    const std::vector<LatentTransition>& batch, Rng& rng) const;

  struct UpdateStats {
    double critic_loss = 0, actor_loss = 0, alpha = 0, sigma = 0;
  };
  UpdateStats update(const std::vector<LatentTransition>& batch, const model::LceF& m, Rng& rng);

  // target-critic value hooks for the exponential-twisting weights
  losses::ValueHooks<S> value_hooks() const;

  int input_dim() const { return goal_conditioned() ? 2 * n_z_ : n_z_; }
  bool goal_conditioned() const { return cfg_.goal_conditioned; }
  VecF actor_input(const VecF& z, const VecF& z_goal) const {
    if (!goal_conditioned()) return z;
    VecF v(2 * n_z_);
    v << z, z_goal;
    return v;
  }

  double alpha() const { return alpha_; }
  double sigma() const { return sigma_; }
  const SACConfig& config() const { return cfg_; }
  int n_z() const { return n_z_; }
  int action_dim() const { return action_dim_; }

  nn::ParamStore<S>& actor_params() { return actor_params_; }
  nn::ParamStore<S>& critic_params() { return critic_params_; }
  nn::ParamStore<S>& target_params() { return target_params_; }
  const nn::ParamStore<S>& actor_params() const { return actor_params_; }
  const nn::ParamStore<S>& critic_params() const { return critic_params_; }
  const nn::ParamStore<S>& target_params() const { return target_params_; }
  nn::Adam<S>& actor_opt() { return actor_opt_; }
  nn::Adam<S>& critic_opt() { return critic_opt_; }
  const nn::Adam<S>& actor_opt() const { return actor_opt_; }
  const nn::Adam<S>& critic_opt() const { return critic_opt_; }
  void set_schedule_state(double alpha, double sigma) {
    alpha_ = alpha;
    sigma_ = sigma;
  }

  // pre-squash action Gaussian on a shared tape (frozen parameters); used by
  // the encoder regularizer and policy distillation
  model::GaussianVars<S> actor_dist_t(ad::Tape<S>& tape, ad::Var<S> z_in) const;
  // same head through a caller-supplied (possibly trainable) context
  model::GaussianVars<S> actor_dist_on(nn::Ctx<S>& ctx, ad::Var<S> z_in) const {
    return actor_head(ctx, z_in);
  }
  // squashed sample with log-prob, differentiable through mean/std
  struct ActionSample {
    ad::Var<S> action;
    ad::Var<S> log_prob;  // 1 x B
  };
  ActionSample sample_action_t(nn::Ctx<S>& actor_ctx, ad::Var<S> z_in, const MatF& eps) const;

 private:
  model::GaussianVars<S> actor_head(nn::Ctx<S>& ctx, ad::Var<S> z_in) const;
  ad::Var<S> critic_q_t(nn::Ctx<S>& ctx, const nn::Mlp<S>& net, ad::Var<S> z_in,
                        ad::Var<S> a) const;
  Eigen::RowVectorXf target_q_min_values(const MatF& z_in, const MatF& a) const;

  int n_z_ = 0, action_dim_ = 0;
  VecF action_low_, action_high_, action_center_, action_scale_;
  SACConfig cfg_;
  nn::ParamStore<S> actor_params_, critic_params_, target_params_;
  nn::Mlp<S> actor_, q1_, q2_, tq1_, tq2_;
  nn::Adam<S> actor_opt_, critic_opt_;
  double alpha_ = 0.2, sigma_ = 1.0;
};

// Latent transitions from real triplets per the training loop: z ~ E(.|x),
// z' ~ F(.|z,a) (model-generated), z_g ~ E(.|x_goal), r from latent_reward.
std::vector<LatentTransition> build_latent_batch(const model::LceF& m,
                                                 const std::vector<envs::Triplet>& real_batch,
                                                 const SACConfig& cfg, Rng& rng,
                                                 bool next_from_model = true);

}  // namespace carl::sac
