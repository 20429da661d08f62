#include "carl/sac.hpp"

#include <cmath>

namespace carl::sac {

namespace {
constexpr float kLogStdMin = -5.0f;
constexpr float kLogStdMax = 2.0f;
constexpr float kSquashEps = 1e-6f;
}  // namespace

RewardForm reward_form_from_string(const std::string& s) {
  if (s == "quadratic") return RewardForm::kQuadratic;
  if (s == "neg_distance") return RewardForm::kNegDistance;
  throw ConfigError("unknown reward form: " + s);
}

std::string to_string(RewardForm f) {
  return f == RewardForm::kQuadratic ? "quadratic" : "neg_distance";
}

void SACConfig::validate() const {
  auto rate = [](double v, const char* what) {
    if (!(v > 0.0 && v <= 1.0)) throw ConfigError(std::string(what) + " must lie in (0,1]");
  };
  rate(gamma, "gamma");
  rate(polyak_rate, "polyak_rate");
  rate(sigma_decay, "sigma_decay");
  rate(alpha_decay, "alpha_decay");
  if (rollout_k < 0) throw ConfigError("rollout_k must be >= 0");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
}

float latent_reward(const VecF& z_next, const VecF& z_goal, const VecF& a, const SACConfig& cfg) {
  if (z_next.size() != z_goal.size()) throw InputError("latent_reward dimension mismatch");
  VecF d = z_next - z_goal;
  if (cfg.reward_form == RewardForm::kQuadratic)
    return -float(cfg.reward_kappa) * d.squaredNorm() - a.squaredNorm();
  return -d.norm();
}

SacAgent SacAgent::create(int n_z, int action_dim, const VecF& action_low,
                          const VecF& action_high, const SACConfig& cfg, Rng& rng) {
  cfg.validate();
  SacAgent ag;
  ag.n_z_ = n_z;
  ag.action_dim_ = action_dim;
  ag.action_low_ = action_low;
  ag.action_high_ = action_high;
  ag.action_center_ = (action_high + action_low) / 2.0f;
  ag.action_scale_ = (action_high - action_low) / 2.0f;
  ag.cfg_ = cfg;
  ag.alpha_ = cfg.alpha0;
  ag.sigma_ = cfg.explore_sigma0;

  const int in = ag.input_dim();
  ag.actor_ = nn::Mlp<S>::create(ag.actor_params_, "actor", in,
                                 {cfg.hidden, cfg.hidden, 2 * action_dim}, nn::Act::kRelu,
                                 nn::Act::kIdentity, rng);
  ag.q1_ = nn::Mlp<S>::create(ag.critic_params_, "q1", in + action_dim,
                              {cfg.hidden, cfg.hidden, 1}, nn::Act::kRelu, nn::Act::kIdentity,
                              rng);
  ag.q2_ = nn::Mlp<S>::create(ag.critic_params_, "q2", in + action_dim,
                              {cfg.hidden, cfg.hidden, 1}, nn::Act::kRelu, nn::Act::kIdentity,
                              rng);
  // target critics start as exact copies
  ag.tq1_ = ag.q1_;
  ag.tq2_ = ag.q2_;
  for (auto& e : ag.critic_params_.entries()) ag.target_params_.add(e.name + ".target", e.value);
  ag.actor_opt_.lr = S(cfg.actor_lr);
  ag.critic_opt_.lr = S(cfg.critic_lr);
  return ag;
}

model::GaussianVars<S> SacAgent::actor_head(nn::Ctx<S>& ctx, ad::Var<S> z_in) const {
  ad::Var<S> out = actor_.forward(ctx, z_in);
  ad::Var<S> mean = ad::slice_rows(out, 0, action_dim_);
  ad::Var<S> log_std = ad::slice_rows(out, action_dim_, action_dim_);
  // clamp log-std into a sane band, keeping gradients inside it
  log_std = ad::max_floor(log_std, kLogStdMin);
  log_std = ad::neg(ad::max_floor(ad::neg(log_std), -kLogStdMax));
  ad::Var<S> var = ad::square(ad::exp_(log_std));
  return {mean, var};
}

model::GaussianVars<S> SacAgent::actor_dist_t(ad::Tape<S>& tape, ad::Var<S> z_in) const {
  nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(actor_params_), /*train=*/false);
  return actor_head(ctx, z_in);
}

SacAgent::ActionSample SacAgent::sample_action_t(nn::Ctx<S>& actor_ctx, ad::Var<S> z_in,
                                                 const MatF& eps) const {
  ad::Tape<S>& t = actor_ctx.tape();
  model::GaussianVars<S> g = actor_head(actor_ctx, z_in);
  ad::Var<S> pre = ad::reparam(g.mean, g.var, t.constant(eps));
  ad::Var<S> squashed = ad::tanh_(pre);
  const int b = int(eps.cols());
  MatF scale_m = action_scale_.replicate(1, b);
  MatF center_m = action_center_.replicate(1, b);
  ad::Var<S> action = ad::add(ad::cmul(squashed, t.constant(scale_m)), t.constant(center_m));
  // log pi = log N(pre) - sum log(scale * (1 - tanh^2) + eps)
  ad::Var<S> log_gauss = ad::gaussian_logpdf(pre, g.mean, g.var);
  ad::Var<S> one_minus = ad::add_scalar(ad::neg(ad::square(squashed)), S(1));
  ad::Var<S> corr =
      ad::sum_cols(ad::log_(ad::add_scalar(ad::cmul(one_minus, t.constant(scale_m)), kSquashEps)));
  return {action, ad::sub(log_gauss, corr)};
}

MatF SacAgent::act_batch(const MatF& z_in, bool deterministic, Rng* rng) const {
  ad::Tape<S> tape;
  nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(actor_params_), false);
  model::GaussianVars<S> g = actor_head(ctx, tape.constant(z_in));
  const int b = int(z_in.cols());
  MatF pre;
  if (deterministic) {
    pre = g.mean.val();
  } else {
    if (!rng) throw InputError("stochastic act requires an rng");
    pre = g.mean.val() + g.var.val().cwiseSqrt().cwiseProduct(rng->normal_mat<S>(action_dim_, b));
  }
  MatF out(action_dim_, b);
  for (int j = 0; j < b; ++j)
    for (int i = 0; i < action_dim_; ++i)
      out(i, j) = action_center_[i] + action_scale_[i] * std::tanh(pre(i, j));
  return out;
}

VecF SacAgent::act(const VecF& z_in, bool explore, Rng* rng) const {
  if (z_in.size() != input_dim()) throw InputError("act: latent input dimension mismatch");
  MatF z(z_in.size(), 1);
  z.col(0) = z_in;
  MatF a = act_batch(z, /*deterministic=*/!explore, rng);
  VecF out = a.col(0);
  if (explore) {
    if (!rng) throw InputError("explore act requires an rng");
    for (int i = 0; i < out.size(); ++i) {
      out[i] += float(sigma_ * rng->normal());
      out[i] = std::clamp(out[i], action_low_[i], action_high_[i]);
    }
  }
  return out;
}

ad::Var<S> SacAgent::critic_q_t(nn::Ctx<S>& ctx, const nn::Mlp<S>& net, ad::Var<S> z_in,
                                ad::Var<S> a) const {
  return net.forward(ctx, ad::concat_rows(z_in, a));
}

Eigen::RowVectorXf SacAgent::target_q_min_values(const MatF& z_in, const MatF& a) const {
  MatF in(z_in.rows() + a.rows(), z_in.cols());
  in.topRows(z_in.rows()) = z_in;
  in.bottomRows(a.rows()) = a;
  ad::Tape<S> tape;
  nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(target_params_), false);
  ad::Var<S> inv = tape.constant(in);
  ad::Var<S> q1 = tq1_.forward(ctx, inv);
  ad::Var<S> q2 = tq2_.forward(ctx, inv);
  return q1.val().row(0).cwiseMin(q2.val().row(0));
}

Eigen::RowVectorXf SacAgent::q_target_batch(const model::LceF& m,
                                            const std::vector<LatentTransition>& batch,
                                            Rng& rng) const {
  const int b = int(batch.size());
  const double g = cfg_.gamma;
  MatF z(n_z_, b), zg(n_z_, b);
  Eigen::RowVectorXf acc(b);
  for (int j = 0; j < b; ++j) {
    z.col(j) = batch[j].z_next;
    zg.col(j) = batch[j].z_goal;
    acc[j] = batch[j].r;  // gamma^0 term: the transition's own reward
  }
  double disc = g;
  MatF z_cur = z;
  for (int i = 1; i <= cfg_.rollout_k; ++i) {
    MatF z_in(input_dim(), b);
    if (goal_conditioned())
      z_in << z_cur, zg;
    else
      z_in = z_cur;
    MatF a = act_batch(z_in, /*deterministic=*/false, &rng);
    auto [f_mean, f_var] = m.transition_batch(z_cur, a);
    MatF z_next = f_mean + f_var.cwiseSqrt().cwiseProduct(rng.normal_mat<float>(n_z_, b));
    for (int j = 0; j < b; ++j) {
      float r = latent_reward(VecF(z_next.col(j)), VecF(zg.col(j)), VecF(a.col(j)), cfg_);
      if (!std::isfinite(double(r)) || !z_next.col(j).allFinite())
        throw TrainingError("non-finite latent rollout at step " + std::to_string(i));
      acc[j] += float(disc) * r;
    }
    disc *= g;
    z_cur = z_next;
  }
  if (cfg_.bootstrap) {
    MatF z_in(input_dim(), b);
    if (goal_conditioned())
      z_in << z_cur, zg;
    else
      z_in = z_cur;
    MatF a = act_batch(z_in, false, &rng);
    Eigen::RowVectorXf qmin = target_q_min_values(z_in, a);
    acc += float(disc) * qmin;
  }
  return acc;
}

float SacAgent::q_target(const model::LceF& m, const LatentTransition& t, Rng& rng) const {
  return q_target_batch(m, {t}, rng)[0];
}

SacAgent::UpdateStats SacAgent::update(const std::vector<LatentTransition>& batch,
                                       const model::LceF& m, Rng& rng) {
  if (batch.empty()) throw InputError("sac update requires a nonempty batch");
  const int b = int(batch.size());
  MatF z(n_z_, b), a(action_dim_, b), zg(n_z_, b);
  for (int j = 0; j < b; ++j) {
    z.col(j) = batch[j].z;
    a.col(j) = batch[j].a;
    zg.col(j) = batch[j].z_goal;
  }
  MatF z_in(input_dim(), b);
  if (goal_conditioned())
    z_in << z, zg;
  else
    z_in = z;

  Eigen::RowVectorXf targets = q_target_batch(m, batch, rng);
  UpdateStats stats;

  {  // critics: 1/2 (Q - target)^2
    ad::Tape<S> tape;
    nn::Ctx<S> ctx(tape, critic_params_, true);
    ad::Var<S> zi = tape.constant(z_in);
    ad::Var<S> ai = tape.constant(a);
    ad::Var<S> q1 = critic_q_t(ctx, q1_, zi, ai);
    ad::Var<S> q2 = critic_q_t(ctx, q2_, zi, ai);
    MatF tgt(1, b);
    tgt.row(0) = targets;
    ad::Var<S> tv = tape.constant(tgt);
    ad::Var<S> loss = ad::scale(
        ad::add(ad::mean_all(ad::square(ad::sub(q1, tv))), ad::mean_all(ad::square(ad::sub(q2, tv)))),
        S(0.5));
    stats.critic_loss = double(loss.scalar());
    if (!std::isfinite(stats.critic_loss)) throw TrainingError("NaN critic loss");
    critic_params_.zero_grad();
    tape.backward(loss);
    ctx.collect_grads();
    critic_opt_.step(critic_params_);
  }

  {  // actor: alpha * log pi - min(Q1, Q2)
    ad::Tape<S> tape;
    nn::Ctx<S> actor_ctx(tape, actor_params_, true);
    nn::Ctx<S> critic_ctx(tape, critic_params_, false);
    MatF eps = rng.normal_mat<S>(action_dim_, b);
    ActionSample as = sample_action_t(actor_ctx, tape.constant(z_in), eps);
    ad::Var<S> zi = tape.constant(z_in);
    ad::Var<S> q1 = critic_q_t(critic_ctx, q1_, zi, as.action);
    ad::Var<S> q2 = critic_q_t(critic_ctx, q2_, zi, as.action);
    ad::Var<S> qmin = ad::min_(q1, q2);
    ad::Var<S> loss = ad::mean_all(ad::sub(ad::scale(as.log_prob, S(alpha_)), qmin));
    stats.actor_loss = double(loss.scalar());
    if (!std::isfinite(stats.actor_loss)) throw TrainingError("NaN actor loss");
    actor_params_.zero_grad();
    tape.backward(loss);
    actor_ctx.collect_grads();
    actor_opt_.step(actor_params_);
  }

  // polyak trail of the live critics
  const S rho = S(cfg_.polyak_rate);
  for (int i = 0; i < critic_params_.size(); ++i) {
    auto& tgt = target_params_.at(i).value;
    tgt = rho * critic_params_.at(i).value + (S(1) - rho) * tgt;
  }

  alpha_ = std::max(alpha_ * cfg_.alpha_decay, cfg_.alpha_min);
  sigma_ = std::max(sigma_ * cfg_.sigma_decay, cfg_.sigma_min);
  stats.alpha = alpha_;
  stats.sigma = sigma_;
  return stats;
}

losses::ValueHooks<S> SacAgent::value_hooks() const {
  losses::ValueHooks<S> hooks;
  hooks.reward = [this](const VecF& zn, const VecF& zg, const VecF& a) {
    return latent_reward(zn, zg, a, cfg_);
  };
  hooks.q_min = [this](const VecF& z, const VecF& a, const VecF& zg) {
    MatF z_in(input_dim(), 1);
    z_in.col(0) = actor_input(z, zg);
    MatF am(action_dim_, 1);
    am.col(0) = a;
    return target_q_min_values(z_in, am)[0];
  };
  hooks.v_soft = [this](const VecF& z, const VecF& zg) {
    // min target-Q at a mode action plus the entropy term at that point
    MatF z_in(input_dim(), 1);
    z_in.col(0) = actor_input(z, zg);
    ad::Tape<S> tape;
    nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(actor_params_), false);
    model::GaussianVars<S> g = actor_head(ctx, tape.constant(z_in));
    MatF pre = g.mean.val();
    MatF act(action_dim_, 1);
    double log_pi = 0.0;
    for (int i = 0; i < action_dim_; ++i) {
      double t = std::tanh(double(pre(i, 0)));
      act(i, 0) = float(action_center_[i] + action_scale_[i] * t);
      double var = double(g.var.val()(i, 0));
      log_pi += -0.5 * std::log(2.0 * M_PI * var);
      log_pi -= std::log(double(action_scale_[i]) * (1.0 - t * t) + double(kSquashEps));
    }
    float qmin = target_q_min_values(z_in, act)[0];
    return float(double(qmin) - alpha_ * log_pi);
  };
  return hooks;
}

std::vector<LatentTransition> build_latent_batch(const model::LceF& m,
                                                 const std::vector<envs::Triplet>& real_batch,
                                                 const SACConfig& cfg, Rng& rng,
                                                 bool next_from_model) {
  const int b = int(real_batch.size());
  const int nz = m.arch.n_z;
  const int obs = m.arch.obs_dim();
  MatF x(obs, b), xg(obs, b), a(int(real_batch[0].a.size()), b);
  MatF xn;
  if (!next_from_model) xn.resize(obs, b);
  for (int j = 0; j < b; ++j) {
    x.col(j) = real_batch[std::size_t(j)].x.pixels;
    xg.col(j) = real_batch[std::size_t(j)].x_goal.pixels;
    a.col(j) = real_batch[std::size_t(j)].a;
    if (!next_from_model) xn.col(j) = real_batch[std::size_t(j)].x_next.pixels;
  }
  auto [ez_mean, ez_var] = m.encode_batch(x);
  MatF z = ez_mean + ez_var.cwiseSqrt().cwiseProduct(rng.normal_mat<float>(nz, b));
  MatF z_next;
  if (next_from_model) {
    auto [f_mean, f_var] = m.transition_batch(z, a);
    z_next = f_mean + f_var.cwiseSqrt().cwiseProduct(rng.normal_mat<float>(nz, b));
  } else {
    auto [en_mean, en_var] = m.encode_batch(xn);
    z_next = en_mean + en_var.cwiseSqrt().cwiseProduct(rng.normal_mat<float>(nz, b));
  }
  auto [eg_mean, eg_var] = m.encode_batch(xg);
  MatF z_goal = eg_mean + eg_var.cwiseSqrt().cwiseProduct(rng.normal_mat<float>(nz, b));

  std::vector<LatentTransition> out;
  out.reserve(real_batch.size());
  for (int j = 0; j < b; ++j) {
    LatentTransition t;
    t.z = z.col(j);
    t.a = a.col(j);
    t.z_next = z_next.col(j);
    t.z_goal = z_goal.col(j);
    t.r = latent_reward(t.z_next, t.z_goal, t.a, cfg);
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace carl::sac
