#include "carl/trainer.hpp"

#include "carl/io/checkpoint.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <thread>

namespace carl::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

long steps_for_epochs(int epochs, std::size_t dataset, int batch) {
  long per_epoch = long((dataset + std::size_t(batch) - 1) / std::size_t(batch));
  return std::max<long>(1, long(epochs) * std::max<long>(1, per_epoch));
}

}  // namespace

RunConfig RunConfig::defaults_for(const std::string& env, losses::Regime regime) {
  RunConfig c;
  c.env = env;
  c.regime = regime;
  losses::LossWeights& w = c.loss_weights;
  bool vg = regime == losses::Regime::kValueGuided;
  if (env == "planar") {
    c.total_env_samples = regime == losses::Regime::kOffline ? 5000 : (vg ? 3200 : 3072);
    c.initial_samples = 1024;
    c.samples_per_iteration = 128;
    w.lambda_ed = 0.01;
    w.lambda_p = vg ? 2.0 : 1.0;
    w.lambda_c = vg ? 11.0 : 7.0;
    w.lambda_cur = 1.0;
    w.tau_vg = 1.0 / 30.0;
  } else if (env == "swingup") {
    c.total_env_samples = regime == losses::Regime::kOffline ? 5000 : 1408;
    c.initial_samples = 384;
    c.samples_per_iteration = 128;
    w.lambda_ed = 0.01;
    w.lambda_p = 1.0;
    w.lambda_c = vg ? 7.0 : 11.0;
    w.lambda_cur = 1.0;
    w.tau_vg = 1.0 / 60.0;
  } else if (env == "cartpole") {
    c.total_env_samples = regime == losses::Regime::kOffline ? 10000 : 5120;
    c.initial_samples = 1024;
    c.samples_per_iteration = 256;
    w.lambda_ed = 0.01;
    w.lambda_p = 1.0;
    w.lambda_c = 7.0;
    w.lambda_cur = 1.0;
    w.tau_vg = 1.0 / 40.0;
  } else if (env == "threepole") {
    c.total_env_samples = regime == losses::Regime::kOffline ? 4096 : (vg ? 2816 : 2944);
    c.initial_samples = vg ? 256 : 384;
    c.samples_per_iteration = 128;
    w.lambda_ed = 0.01;
    w.lambda_p = vg ? 2.0 : 1.0;
    w.lambda_c = 11.0;
    w.lambda_cur = 1.0;
    w.tau_vg = 1.0 / 60.0;
  } else {
    throw ConfigError("unknown environment: " + env);
  }
  return c;
}

void RunConfig::validate() const {
  if (total_env_samples <= 0) throw ConfigError("total_env_samples must be positive");
  if (regime != losses::Regime::kOffline) {
    if (initial_samples <= 0 || samples_per_iteration <= 0)
      throw ConfigError("online regimes need positive warm-start and per-iteration budgets");
    if (total_env_samples < initial_samples)
      throw ConfigError("total budget smaller than the warm start");
    if ((total_env_samples - initial_samples) % samples_per_iteration != 0)
      throw ConfigError("(total - initial) must be a multiple of samples_per_iteration");
  }
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  loss_weights.validate();
  sac.validate();
}

json RunConfig::to_json() const {
  json j;
  j["env"] = env;
  j["regime"] = losses::to_string(regime);
  j["total_env_samples"] = total_env_samples;
  j["initial_samples"] = initial_samples;
  j["samples_per_iteration"] = samples_per_iteration;
  j["lce_epochs_offline"] = lce_epochs_offline;
  j["lce_epochs_per_iteration"] = lce_epochs_per_iteration;
  j["sac_steps_offline"] = sac_steps_offline;
  j["sac_steps_per_iteration"] = sac_steps_per_iteration;
  j["distill_epochs"] = distill_epochs;
  j["distill_enabled"] = distill_enabled;
  j["batch_size"] = batch_size;
  j["lce_lr"] = lce_lr;
  j["l2_coeff"] = l2_coeff;
  j["reinit_lce_each_iteration"] = reinit_lce_each_iteration;
  j["next_from_model"] = next_from_model;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["eval_episodes"] = eval_episodes;
  j["eval_every_sac_steps"] = eval_every_sac_steps;
  j["checkpoint_every_steps"] = checkpoint_every_steps;
  j["bias_p"] = bias_p;
  j["initial_mode"] = envs::to_string(initial_mode);
  const losses::LossWeights& w = loss_weights;
  j["loss_weights"] = {{"lambda_ed", w.lambda_ed},
                       {"lambda_p", w.lambda_p},
                       {"lambda_c", w.lambda_c},
                       {"lambda_cur", w.lambda_cur},
                       {"lambda_reg", w.lambda_reg},
                       {"det_recon_coeff", w.det_recon_coeff},
                       {"curvature_noise_var", w.curvature_noise_var},
                       {"tau_vg", w.tau_vg},
                       {"gamma", w.gamma},
                       {"vae_enabled", w.vae_enabled},
                       {"vae_coeff", w.vae_coeff},
                       {"weight_clip_min", w.weight_clip_min},
                       {"weight_clip_max", w.weight_clip_max}};
  j["sac"] = {{"gamma", sac.gamma},
              {"polyak_rate", sac.polyak_rate},
              {"buffer_capacity", sac.buffer_capacity},
              {"batch_size", sac.batch_size},
              {"rollout_k", sac.rollout_k},
              {"critic_lr", sac.critic_lr},
              {"actor_lr", sac.actor_lr},
              {"explore_sigma0", sac.explore_sigma0},
              {"sigma_decay", sac.sigma_decay},
              {"sigma_min", sac.sigma_min},
              {"alpha0", sac.alpha0},
              {"alpha_decay", sac.alpha_decay},
              {"alpha_min", sac.alpha_min},
              {"reward_kappa", sac.reward_kappa},
              {"reward_form", sac::to_string(sac.reward_form)},
              {"bootstrap", sac.bootstrap},
              {"goal_conditioned", sac.goal_conditioned},
              {"hidden", sac.hidden}};
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  c.env = j.at("env").get<std::string>();
  c.regime = losses::regime_from_string(j.at("regime").get<std::string>());
  c.total_env_samples = j.at("total_env_samples").get<int>();
  c.initial_samples = j.at("initial_samples").get<int>();
  c.samples_per_iteration = j.at("samples_per_iteration").get<int>();
  c.lce_epochs_offline = j.at("lce_epochs_offline").get<int>();
  c.lce_epochs_per_iteration = j.at("lce_epochs_per_iteration").get<int>();
  c.sac_steps_offline = j.at("sac_steps_offline").get<int>();
  c.sac_steps_per_iteration = j.at("sac_steps_per_iteration").get<int>();
  c.distill_epochs = j.at("distill_epochs").get<int>();
  c.distill_enabled = j.at("distill_enabled").get<bool>();
  c.batch_size = j.at("batch_size").get<int>();
  c.lce_lr = j.at("lce_lr").get<double>();
  c.l2_coeff = j.at("l2_coeff").get<double>();
  c.reinit_lce_each_iteration = j.at("reinit_lce_each_iteration").get<bool>();
  c.next_from_model = j.at("next_from_model").get<bool>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.out_dir = j.at("out_dir").get<std::string>();
  c.eval_episodes = j.at("eval_episodes").get<int>();
  c.eval_every_sac_steps = j.at("eval_every_sac_steps").get<int>();
  c.checkpoint_every_steps = j.at("checkpoint_every_steps").get<int>();
  c.bias_p = j.at("bias_p").get<double>();
  c.initial_mode = envs::sample_mode_from_string(j.at("initial_mode").get<std::string>());
  const json& w = j.at("loss_weights");
  c.loss_weights.lambda_ed = w.at("lambda_ed").get<double>();
  c.loss_weights.lambda_p = w.at("lambda_p").get<double>();
  c.loss_weights.lambda_c = w.at("lambda_c").get<double>();
  c.loss_weights.lambda_cur = w.at("lambda_cur").get<double>();
  c.loss_weights.lambda_reg = w.at("lambda_reg").get<double>();
  c.loss_weights.det_recon_coeff = w.at("det_recon_coeff").get<double>();
  c.loss_weights.curvature_noise_var = w.at("curvature_noise_var").get<double>();
  c.loss_weights.tau_vg = w.at("tau_vg").get<double>();
  c.loss_weights.gamma = w.at("gamma").get<double>();
  c.loss_weights.vae_enabled = w.at("vae_enabled").get<bool>();
  c.loss_weights.vae_coeff = w.at("vae_coeff").get<double>();
  c.loss_weights.weight_clip_min = w.at("weight_clip_min").get<double>();
  c.loss_weights.weight_clip_max = w.at("weight_clip_max").get<double>();
  const json& s = j.at("sac");
  c.sac.gamma = s.at("gamma").get<double>();
  c.sac.polyak_rate = s.at("polyak_rate").get<double>();
  c.sac.buffer_capacity = s.at("buffer_capacity").get<std::size_t>();
  c.sac.batch_size = s.at("batch_size").get<int>();
  c.sac.rollout_k = s.at("rollout_k").get<int>();
  c.sac.critic_lr = s.at("critic_lr").get<double>();
  c.sac.actor_lr = s.at("actor_lr").get<double>();
  c.sac.explore_sigma0 = s.at("explore_sigma0").get<double>();
  c.sac.sigma_decay = s.at("sigma_decay").get<double>();
  c.sac.sigma_min = s.at("sigma_min").get<double>();
  c.sac.alpha0 = s.at("alpha0").get<double>();
  c.sac.alpha_decay = s.at("alpha_decay").get<double>();
  c.sac.alpha_min = s.at("alpha_min").get<double>();
  c.sac.reward_kappa = s.at("reward_kappa").get<double>();
  c.sac.reward_form = sac::reward_form_from_string(s.at("reward_form").get<std::string>());
  c.sac.bootstrap = s.at("bootstrap").get<bool>();
  c.sac.goal_conditioned = s.at("goal_conditioned").get<bool>();
  c.sac.hidden = s.at("hidden").get<int>();
  return c;
}

void RealBuffer::append(std::vector<envs::Triplet> batch) {
  for (auto& t : batch) data_.push_back(std::move(t));
}

void RealBuffer::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ResourceError("cannot write " + path);
  std::uint64_t n = data_.size();
  os.write(reinterpret_cast<const char*>(&n), sizeof(n));
  auto put = [&](const VecF& v) {
    std::uint32_t k = std::uint32_t(v.size());
    os.write(reinterpret_cast<const char*>(&k), sizeof(k));
    os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(k * sizeof(float)));
  };
  for (const auto& t : data_) {
    put(t.x.pixels);
    put(t.a);
    put(t.x_next.pixels);
    put(t.x_goal.pixels);
  }
}

void RealBuffer::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IntegrityError("missing real buffer file " + path);
  std::uint64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof(n));
  auto get = [&](VecF& v) {
    std::uint32_t k = 0;
    is.read(reinterpret_cast<char*>(&k), sizeof(k));
    v.resize(k);
    is.read(reinterpret_cast<char*>(v.data()), std::streamsize(k * sizeof(float)));
  };
  data_.clear();
  data_.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    envs::Triplet t;
    get(t.x.pixels);
    get(t.a);
    get(t.x_next.pixels);
    get(t.x_goal.pixels);
    data_.push_back(std::move(t));
  }
  if (!is) throw IntegrityError("truncated real buffer file " + path);
}

// ---- Trainer ----

Trainer::Trainer(RunConfig cfg) {
  cfg.validate();
  cfg_ = std::move(cfg);
  init_fresh();
}

void Trainer::init_fresh() {
  env_ = envs::make_env(cfg_.env, cfg_.seed);
  fs::create_directories(cfg_.out_dir);
  fs::create_directories(fs::path(cfg_.out_dir) / "checkpoints");
  {
    std::ofstream cf(fs::path(cfg_.out_dir) / "config.json");
    cf << cfg_.to_json().dump(2) << '\n';
  }
  rng_data_ = Rng::substream(cfg_.seed, "data");
  rng_init_ = Rng::substream(cfg_.seed, "init");
  rng_loss_ = Rng::substream(cfg_.seed, "loss");
  rng_weights_ = Rng::substream(cfg_.seed, "weights");
  rng_sac_ = Rng::substream(cfg_.seed, "sac");
  rng_collect_ = Rng::substream(cfg_.seed, "collect");
  model::LceArch arch = model::arch_for(envs::env_name_from_string(cfg_.env));
  lce_.emplace(model::LceF::create(arch, rng_init_));
  lce_opt_ = nn::Adam<float>{};
  lce_opt_.lr = float(cfg_.lce_lr);
  lce_opt_.weight_decay = float(cfg_.l2_coeff);
  phase_ = Phase::kCollect;
  open_metrics(/*truncate_to_header=*/true);
}

void Trainer::open_metrics(bool truncate) {
  fs::path p = fs::path(cfg_.out_dir) / "metrics.csv";
  if (truncate) {
    metrics_.open(p, std::ios::trunc);
    metrics_ << "kind,iteration,env_samples,step,recon,prediction,consistency,curvature,"
                "encoder_reg,det_recon,vae,total,w_min,w_mean,w_max,critic_loss,actor_loss,"
                "alpha,sigma,percent_goal\n";
    metrics_lines_ = 0;
  } else {
    // resume: keep exactly metrics_lines_ data rows
    std::ifstream in(p);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    in.close();
    long keep = std::min<long>(metrics_lines_ + 1, long(lines.size()));
    std::ofstream out(p, std::ios::trunc);
    for (long i = 0; i < keep; ++i) out << lines[std::size_t(i)] << '\n';
    out.close();
    metrics_.open(p, std::ios::app);
  }
}

void Trainer::collect_initial() {
  double p = cfg_.bias_p < 0.0 ? env_->spec().default_bias_p : cfg_.bias_p;
  int n = cfg_.regime == losses::Regime::kOffline ? cfg_.total_env_samples
                                                  : cfg_.initial_samples;
  buffer_.append(envs::sample_dataset(*env_, n, cfg_.initial_mode, p, rng_data_,
                                      &train_counter_));
  buffer_.save((fs::path(cfg_.out_dir) / "real_buffer.bin").string());
}

std::vector<const envs::Triplet*> Trainer::draw_batch() {
  std::vector<const envs::Triplet*> out;
  out.reserve(std::size_t(cfg_.batch_size));
  for (int i = 0; i < cfg_.batch_size; ++i)
    out.push_back(&buffer_.data()[rng_data_.index(buffer_.size())]);
  return out;
}

Eigen::RowVectorXf Trainer::value_weights_for(const std::vector<const envs::Triplet*>& batch) {
  Eigen::RowVectorXf w = Eigen::RowVectorXf::Ones(int(batch.size()));
  if (!lce_prev_ || !agent_) return w;
  losses::ValueHooks<float> hooks = agent_->value_hooks();
  for (int j = 0; j < int(batch.size()); ++j) {
    const envs::Triplet& t = *batch[std::size_t(j)];
    w[j] = losses::value_weight_raw<float>(*lce_prev_, hooks, t.x.pixels, t.a, t.x_next.pixels,
                                           t.x_goal.pixels, cfg_.loss_weights.tau_vg,
                                           cfg_.loss_weights.gamma, rng_weights_);
  }
  return losses::normalize_weights<float>(w, cfg_.loss_weights.weight_clip_min,
                                          cfg_.loss_weights.weight_clip_max);
}

double Trainer::lce_step(losses::Regime mode) {
  std::vector<const envs::Triplet*> batch = draw_batch();
  const int b = int(batch.size());
  const int obs = lce_->arch.obs_dim();
  losses::TotalLossInputs<float> in;
  in.m = &*lce_;
  in.mode = mode;
  in.x.resize(obs, b);
  in.a.resize(lce_->arch.action_dim, b);
  in.x_next.resize(obs, b);
  in.x_goal.resize(obs, b);
  for (int j = 0; j < b; ++j) {
    in.x.col(j) = batch[std::size_t(j)]->x.pixels;
    in.a.col(j) = batch[std::size_t(j)]->a;
    in.x_next.col(j) = batch[std::size_t(j)]->x_next.pixels;
    in.x_goal.col(j) = batch[std::size_t(j)]->x_goal.pixels;
  }
  Eigen::RowVectorXf weights;
  if (mode == losses::Regime::kValueGuided) {
    weights = value_weights_for(batch);
    in.value_weights = &weights;
  }
  if (mode != losses::Regime::kOffline && lce_prev_) {
    in.m_old = &*lce_prev_;
    const sac::SacAgent* actor = agent_ ? &*agent_ : nullptr;
    if (actor) {
      // the actor sees (z, z_goal); pair fresh z with the batch goal means
      MatF goal_means = lce_->encode_means(in.x_goal);
      bool goal_cond = actor->goal_conditioned();
      in.actor = [actor, goal_means, goal_cond](ad::Tape<float>& tape,
                                                ad::Var<float> z) -> model::GaussianVars<float> {
        ad::Var<float> z_in = z;
        if (goal_cond) z_in = ad::concat_rows(z, tape.constant(goal_means));
        return actor->actor_dist_t(tape, z_in);
      };
    } else {
      in.m_old = nullptr;  // iteration 0: no policy yet, regularizer contributes 0
    }
  }
  losses::LossNoise<float> noise =
      losses::LossNoise<float>::draw(rng_loss_, lce_->arch.n_z, lce_->arch.action_dim, b);
  ad::Tape<float> tape;
  nn::Ctx<float> ctx(tape, lce_->params, true);
  auto [total, rep] = losses::total_loss_t<float>(ctx, in, cfg_.loss_weights, noise);
  if (!std::isfinite(rep.total))
    throw TrainingError("LCE loss diverged (last checkpoint: " + cfg_.out_dir +
                        "/checkpoints)");
  lce_->params.zero_grad();
  tape.backward(total);
  ctx.collect_grads();
  lce_opt_.step(lce_->params);
  write_lce_row(rep);
  return rep.total;
}

double Trainer::lce_train_steps(int steps, losses::Regime mode) {
  double last = 0.0;
  for (int i = 0; i < steps; ++i) last = lce_step(mode);
  return last;
}

void Trainer::write_lce_row(const losses::LossReport& r) {
  metrics_ << "lce," << iteration_ << ',' << train_counter_.steps << ',' << lce_step_in_phase_
           << ',' << fmt(r.recon) << ',' << fmt(r.prediction) << ',' << fmt(r.consistency)
           << ',' << fmt(r.curvature) << ',' << fmt(r.encoder_reg) << ',' << fmt(r.det_recon)
           << ',' << fmt(r.vae) << ',' << fmt(r.total) << ',' << fmt(r.weight_min) << ','
           << fmt(r.weight_mean) << ',' << fmt(r.weight_max) << ",,,,,\n";
  metrics_.flush();
  ++metrics_lines_;
}

void Trainer::write_sac_row(const sac::SacAgent::UpdateStats& st) {
  metrics_ << "sac," << iteration_ << ',' << train_counter_.steps << ',' << sac_step_in_phase_
           << ",,,,,,,,,,,," << fmt(st.critic_loss) << ',' << fmt(st.actor_loss) << ','
           << fmt(st.alpha) << ',' << fmt(st.sigma) << ",\n";
  metrics_.flush();
  ++metrics_lines_;
}

void Trainer::eval_row() {
  envs::ActFn policy = evalr::make_policy(*lce_, *agent_);
  evalr::EvalReport rep =
      evalr::percent_goal(*env_, policy, cfg_.eval_episodes, env_->spec().horizon,
                          substream_seed(cfg_.seed, hash_name("eval-" + std::to_string(iteration_))),
                          &eval_counter_);
  metrics_ << "eval," << iteration_ << ',' << train_counter_.steps << ",0,,,,,,,,,,,,,,,,"
           << fmt(rep.mean) << '\n';
  metrics_.flush();
  ++metrics_lines_;
  last_eval_ = rep.mean;
}

void Trainer::sac_phase(int steps) {
  if (!latent_buffer_) latent_buffer_.emplace(cfg_.sac.buffer_capacity);
  for (; sac_step_in_phase_ < steps; ++sac_step_in_phase_) {
    if (cfg_.checkpoint_every_steps > 0 && sac_step_in_phase_ > 0 &&
        sac_step_in_phase_ % cfg_.checkpoint_every_steps == 0)
      save_checkpoint("sac_" + std::to_string(iteration_) + "_" +
                      std::to_string(sac_step_in_phase_));
    std::vector<const envs::Triplet*> real = draw_batch();
    std::vector<envs::Triplet> real_copy;
    real_copy.reserve(real.size());
    for (const envs::Triplet* t : real) real_copy.push_back(*t);
    std::vector<sac::LatentTransition> latents =
        sac::build_latent_batch(*lce_, real_copy, cfg_.sac, rng_sac_, cfg_.next_from_model);
    for (auto& t : latents) latent_buffer_->add(std::move(t));
    std::vector<sac::LatentTransition> batch =
        latent_buffer_->sample(cfg_.sac.batch_size, rng_sac_);
    sac::SacAgent::UpdateStats st = agent_->update(batch, *lce_, rng_sac_);
    write_sac_row(st);
    if (cfg_.eval_every_sac_steps > 0 && (sac_step_in_phase_ + 1) % cfg_.eval_every_sac_steps == 0)
      eval_row();
  }
}

void Trainer::distill_phase() {
  if (!cfg_.distill_enabled || iteration_ < 1 || !agent_prev_ || !lce_prev_) return;
  std::vector<VecF> observations, goals;
  std::size_t n = std::min<std::size_t>(buffer_.size(), 512);
  for (std::size_t i = 0; i < n; ++i) {
    const envs::Triplet& t = buffer_.data()[rng_data_.index(buffer_.size())];
    observations.push_back(t.x.pixels);
    goals.push_back(t.x_goal.pixels);
  }
  DistillStats st = policy_distill(*agent_, *lce_, *agent_prev_, *lce_prev_, observations, goals,
                                   cfg_.distill_epochs, cfg_.batch_size, rng_loss_);
  std::ofstream ev(fs::path(cfg_.out_dir) / "events.log", std::ios::app);
  ev << "distill iteration=" << iteration_ << " initial=" << st.initial << " final=" << st.final_
     << '\n';
}

void Trainer::collect_phase(int n) {
  const sac::SacAgent& agent = *agent_;
  const model::LceF& m = *lce_;
  envs::ActFn act = [&agent, &m, this](const envs::Observation& obs) -> VecF {
    auto [mean, var] = m.encode_batch(obs.pixels);
    VecF z = VecF(mean.col(0)) +
             VecF(var.col(0)).cwiseSqrt().cwiseProduct(rng_collect_.normal_vec<float>(m.arch.n_z));
    VecF zg = VecF::Zero(m.arch.n_z);
    if (agent.goal_conditioned()) zg = m.encode_means(obs.goal_pixels).col(0);
    return agent.act(agent.actor_input(z, zg), /*explore=*/true, &rng_collect_);
  };
  buffer_.append(envs::collect_with_policy(*env_, act, n, rng_collect_, &train_counter_));
  buffer_.save((fs::path(cfg_.out_dir) / "real_buffer.bin").string());
}

void Trainer::run_offline() {
  if (phase_ == Phase::kCollect) {
    collect_initial();
    phase_ = Phase::kLce;
    lce_step_in_phase_ = 0;
  }
  if (phase_ == Phase::kLce) {
    long total = steps_for_epochs(cfg_.lce_epochs_offline, buffer_.size(), cfg_.batch_size);
    for (; lce_step_in_phase_ < total; ++lce_step_in_phase_) {
      if (cfg_.checkpoint_every_steps > 0 && lce_step_in_phase_ > 0 &&
          lce_step_in_phase_ % cfg_.checkpoint_every_steps == 0)
        save_checkpoint("lce_" + std::to_string(lce_step_in_phase_));
      lce_step(losses::Regime::kOffline);
    }
    agent_.emplace(sac::SacAgent::create(lce_->arch.n_z, lce_->arch.action_dim,
                                         env_->spec().action_low, env_->spec().action_high,
                                         cfg_.sac, rng_init_));
    phase_ = Phase::kSac;
    sac_step_in_phase_ = 0;
  }
  if (phase_ == Phase::kSac) {
    sac_phase(cfg_.sac_steps_offline);
    eval_row();
    phase_ = Phase::kDone;
    save_checkpoint("final");
  }
}

void Trainer::run_online() {
  if (phase_ == Phase::kCollect) {
    collect_initial();
    phase_ = Phase::kLce;
    lce_step_in_phase_ = 0;
    iteration_ = 0;
  }
  const int iters = (cfg_.total_env_samples - cfg_.initial_samples) / cfg_.samples_per_iteration;
  while (iteration_ < iters) {
    if (phase_ == Phase::kLce) {
      if (cfg_.reinit_lce_each_iteration && iteration_ > 0) {
        model::LceArch arch = lce_->arch;
        lce_.emplace(model::LceF::create(arch, rng_init_));
        lce_opt_ = nn::Adam<float>{};
        lce_opt_.lr = float(cfg_.lce_lr);
        lce_opt_.weight_decay = float(cfg_.l2_coeff);
      }
      long total =
          steps_for_epochs(cfg_.lce_epochs_per_iteration, buffer_.size(), cfg_.batch_size);
      losses::Regime mode = cfg_.regime;
      for (; lce_step_in_phase_ < total; ++lce_step_in_phase_) {
        if (cfg_.checkpoint_every_steps > 0 && lce_step_in_phase_ > 0 &&
            lce_step_in_phase_ % cfg_.checkpoint_every_steps == 0)
          save_checkpoint("lce_" + std::to_string(iteration_) + "_" +
                          std::to_string(lce_step_in_phase_));
        lce_step(mode);
      }
      agent_prev_ = std::move(agent_);
      agent_.emplace(sac::SacAgent::create(lce_->arch.n_z, lce_->arch.action_dim,
                                           env_->spec().action_low, env_->spec().action_high,
                                           cfg_.sac, rng_init_));
      phase_ = Phase::kDistill;
    }
    if (phase_ == Phase::kDistill) {
      distill_phase();
      latent_buffer_.reset();
      phase_ = Phase::kSac;
      sac_step_in_phase_ = 0;
    }
    if (phase_ == Phase::kSac) {
      sac_phase(cfg_.sac_steps_per_iteration);
      phase_ = Phase::kCollectIter;
    }
    if (phase_ == Phase::kCollectIter) {
      collect_phase(cfg_.samples_per_iteration);
      eval_row();
      lce_prev_.emplace(*lce_);  // frozen E^{(i)} snapshot for iteration i+1
      ++iteration_;
      phase_ = Phase::kLce;
      lce_step_in_phase_ = 0;
      save_checkpoint("iter_" + std::to_string(iteration_));
    }
  }
  if (phase_ != Phase::kDone) {
    phase_ = Phase::kDone;
    save_checkpoint("final");
  }
}

TrainSummary Trainer::run() {
  if (cfg_.regime == losses::Regime::kOffline)
    run_offline();
  else
    run_online();
  if (train_counter_.steps != std::uint64_t(cfg_.total_env_samples))
    throw IntegrityError("environment budget mismatch: consumed " +
                         std::to_string(train_counter_.steps) + " of " +
                         std::to_string(cfg_.total_env_samples));
  TrainSummary s;
  s.iterations = iteration_;
  s.env_samples = train_counter_.steps;
  s.final_percent_goal = last_eval_;
  s.run_dir = cfg_.out_dir;
  return s;
}

// ---- checkpointing ----

void Trainer::save_checkpoint(const std::string& tag) {
  fs::path dir = fs::path(cfg_.out_dir) / "checkpoints" / tag;
  fs::create_directories(dir);
  json st;
  st["env"] = cfg_.env;
  st["iteration"] = iteration_;
  st["phase"] = int(phase_);
  st["lce_step_in_phase"] = lce_step_in_phase_;
  st["sac_step_in_phase"] = sac_step_in_phase_;
  st["metrics_lines"] = metrics_lines_;
  st["train_steps"] = train_counter_.steps;
  st["train_clips"] = train_counter_.clip_events;
  st["eval_steps"] = eval_counter_.steps;
  st["last_eval"] = last_eval_;
  st["rng"] = {{"data", rng_data_.serialize()},   {"init", rng_init_.serialize()},
               {"loss", rng_loss_.serialize()},   {"weights", rng_weights_.serialize()},
               {"sac", rng_sac_.serialize()},     {"collect", rng_collect_.serialize()}};
  st["lce_opt_steps"] = lce_opt_.steps;
  io::save_param_store(lce_->params, (dir / "lce.bin").string(), st["lce"], true);
  st["has_lce_prev"] = bool(lce_prev_);
  if (lce_prev_)
    io::save_param_store(lce_prev_->params, (dir / "lce_prev.bin").string(), st["lce_prev"],
                         false);
  st["has_agent"] = bool(agent_);
  if (agent_) {
    st["agent"] = {{"alpha", agent_->alpha()},
                   {"sigma", agent_->sigma()},
                   {"actor_opt_steps", agent_->actor_opt().steps},
                   {"critic_opt_steps", agent_->critic_opt().steps}};
    io::save_param_store(agent_->actor_params(), (dir / "actor.bin").string(),
                         st["agent"]["actor"], true);
    io::save_param_store(agent_->critic_params(), (dir / "critic.bin").string(),
                         st["agent"]["critic"], true);
    io::save_param_store(agent_->target_params(), (dir / "target.bin").string(),
                         st["agent"]["target"], false);
  }
  st["has_agent_prev"] = bool(agent_prev_);
  if (agent_prev_) {
    st["agent_prev"] = {{"alpha", agent_prev_->alpha()}, {"sigma", agent_prev_->sigma()}};
    io::save_param_store(agent_prev_->actor_params(), (dir / "actor_prev.bin").string(),
                         st["agent_prev"]["actor"], false);
    io::save_param_store(agent_prev_->critic_params(), (dir / "critic_prev.bin").string(),
                         st["agent_prev"]["critic"], false);
    io::save_param_store(agent_prev_->target_params(), (dir / "target_prev.bin").string(),
                         st["agent_prev"]["target"], false);
  }
  // latent buffer (reset per iteration, but mid-phase checkpoints need it)
  st["has_latent_buffer"] = bool(latent_buffer_);
  if (latent_buffer_) {
    std::ofstream os(dir / "latent.bin", std::ios::binary);
    std::uint64_t n = latent_buffer_->size();
    os.write(reinterpret_cast<const char*>(&n), sizeof(n));
    for (std::uint64_t i = 0; i < n; ++i) {
      const sac::LatentTransition& t = latent_buffer_->at(i);
      auto put = [&](const VecF& v) {
        std::uint32_t k = std::uint32_t(v.size());
        os.write(reinterpret_cast<const char*>(&k), sizeof(k));
        os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(k * sizeof(float)));
      };
      put(t.z);
      put(t.a);
      put(t.z_next);
      put(t.z_goal);
      os.write(reinterpret_cast<const char*>(&t.r), sizeof(t.r));
    }
  }
  {
    std::ofstream sf(dir / "state.json");
    sf << st.dump(2) << '\n';
  }
  buffer_.save((fs::path(cfg_.out_dir) / "real_buffer.bin").string());
  std::ofstream latest(fs::path(cfg_.out_dir) / "LATEST");
  latest << tag << '\n';
}

Trainer Trainer::resume(const std::string& run_dir) {
  std::ifstream cf(fs::path(run_dir) / "config.json");
  if (!cf) throw IntegrityError("missing config.json in " + run_dir);
  RunConfig cfg = RunConfig::from_json(json::parse(cf));
  cfg.out_dir = run_dir;

  Trainer t;
  t.cfg_ = cfg;
  t.env_ = envs::make_env(cfg.env, cfg.seed);
  t.load_checkpoint(run_dir);
  return t;
}

void Trainer::load_checkpoint(const std::string& run_dir) {
  std::ifstream lf(fs::path(run_dir) / "LATEST");
  if (!lf) throw IntegrityError("missing LATEST marker in " + run_dir);
  std::string tag;
  lf >> tag;
  fs::path dir = fs::path(run_dir) / "checkpoints" / tag;
  std::ifstream sf(dir / "state.json");
  if (!sf) throw IntegrityError("missing checkpoint state " + (dir / "state.json").string());
  json st = json::parse(sf);
  if (st.at("env").get<std::string>() != cfg_.env)
    throw IntegrityError("checkpoint env '" + st.at("env").get<std::string>() +
                         "' does not match config env '" + cfg_.env + "'");

  iteration_ = st.at("iteration").get<int>();
  phase_ = Phase(st.at("phase").get<int>());
  lce_step_in_phase_ = st.at("lce_step_in_phase").get<long>();
  sac_step_in_phase_ = st.at("sac_step_in_phase").get<long>();
  metrics_lines_ = st.at("metrics_lines").get<long>();
  train_counter_.steps = st.at("train_steps").get<std::uint64_t>();
  train_counter_.clip_events = st.at("train_clips").get<std::uint64_t>();
  eval_counter_.steps = st.at("eval_steps").get<std::uint64_t>();
  last_eval_ = st.at("last_eval").get<double>();
  rng_data_.deserialize(st.at("rng").at("data").get<std::string>());
  rng_init_.deserialize(st.at("rng").at("init").get<std::string>());
  rng_loss_.deserialize(st.at("rng").at("loss").get<std::string>());
  rng_weights_.deserialize(st.at("rng").at("weights").get<std::string>());
  rng_sac_.deserialize(st.at("rng").at("sac").get<std::string>());
  rng_collect_.deserialize(st.at("rng").at("collect").get<std::string>());

  model::LceArch arch = model::arch_for(envs::env_name_from_string(cfg_.env));
  Rng scratch(0);
  lce_.emplace(model::LceF::create(arch, scratch));
  io::load_param_store(lce_->params, (dir / "lce.bin").string(), st.at("lce"));
  lce_opt_ = nn::Adam<float>{};
  lce_opt_.lr = float(cfg_.lce_lr);
  lce_opt_.weight_decay = float(cfg_.l2_coeff);
  lce_opt_.steps = st.at("lce_opt_steps").get<long>();
  if (st.at("has_lce_prev").get<bool>()) {
    Rng scratch2(0);
    lce_prev_.emplace(model::LceF::create(arch, scratch2));
    io::load_param_store(lce_prev_->params, (dir / "lce_prev.bin").string(), st.at("lce_prev"));
  }
  auto make_agent = [&](Rng& r) {
    return sac::SacAgent::create(lce_->arch.n_z, lce_->arch.action_dim, env_->spec().action_low,
                                 env_->spec().action_high, cfg_.sac, r);
  };
  if (st.at("has_agent").get<bool>()) {
    Rng scratch3(0);
    agent_.emplace(make_agent(scratch3));
    io::load_param_store(agent_->actor_params(), (dir / "actor.bin").string(),
                         st.at("agent").at("actor"));
    io::load_param_store(agent_->critic_params(), (dir / "critic.bin").string(),
                         st.at("agent").at("critic"));
    io::load_param_store(agent_->target_params(), (dir / "target.bin").string(),
                         st.at("agent").at("target"));
    agent_->set_schedule_state(st.at("agent").at("alpha").get<double>(),
                               st.at("agent").at("sigma").get<double>());
    agent_->actor_opt().steps = st.at("agent").at("actor_opt_steps").get<long>();
    agent_->critic_opt().steps = st.at("agent").at("critic_opt_steps").get<long>();
  }
  if (st.at("has_agent_prev").get<bool>()) {
    Rng scratch4(0);
    agent_prev_.emplace(make_agent(scratch4));
    io::load_param_store(agent_prev_->actor_params(), (dir / "actor_prev.bin").string(),
                         st.at("agent_prev").at("actor"));
    io::load_param_store(agent_prev_->critic_params(), (dir / "critic_prev.bin").string(),
                         st.at("agent_prev").at("critic"));
    io::load_param_store(agent_prev_->target_params(), (dir / "target_prev.bin").string(),
                         st.at("agent_prev").at("target"));
    agent_prev_->set_schedule_state(st.at("agent_prev").at("alpha").get<double>(),
                                    st.at("agent_prev").at("sigma").get<double>());
  }
  if (st.at("has_latent_buffer").get<bool>()) {
    latent_buffer_.emplace(cfg_.sac.buffer_capacity);
    std::ifstream is(dir / "latent.bin", std::ios::binary);
    if (!is) throw IntegrityError("missing latent buffer blob in checkpoint " + tag);
    std::uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&n), sizeof(n));
    for (std::uint64_t i = 0; i < n; ++i) {
      sac::LatentTransition t;
      auto get = [&](VecF& v) {
        std::uint32_t k = 0;
        is.read(reinterpret_cast<char*>(&k), sizeof(k));
        v.resize(k);
        is.read(reinterpret_cast<char*>(v.data()), std::streamsize(k * sizeof(float)));
      };
      get(t.z);
      get(t.a);
      get(t.z_next);
      get(t.z_goal);
      is.read(reinterpret_cast<char*>(&t.r), sizeof(t.r));
      latent_buffer_->add(std::move(t));
    }
  }
  buffer_.load((fs::path(run_dir) / "real_buffer.bin").string());
  open_metrics(/*truncate_to_header=*/false);
}

// ---- distillation ----

DistillStats policy_distill(sac::SacAgent& actor_new, const model::LceF& e_new,
                            const sac::SacAgent& actor_old, const model::LceF& e_old,
                            const std::vector<VecF>& observations,
                            const std::vector<VecF>& goals, int epochs, int batch_size,
                            Rng& rng) {
  if (observations.empty()) throw ConfigError("policy distillation requires observations");
  const int nz = e_new.arch.n_z;
  DistillStats stats;
  auto objective_and_maybe_step = [&](bool do_step, std::size_t lo, std::size_t hi) {
    const int b = int(hi - lo);
    MatF x(e_new.arch.obs_dim(), b), xg(e_new.arch.obs_dim(), b);
    for (int j = 0; j < b; ++j) {
      x.col(j) = observations[lo + std::size_t(j)];
      xg.col(j) = goals[lo + std::size_t(j)];
    }
    auto [mn, vn] = e_new.encode_batch(x);
    auto [mo, vo] = e_old.encode_batch(x);
    MatF eps = rng.normal_mat<float>(nz, b);
    MatF z_new = mn + vn.cwiseSqrt().cwiseProduct(eps);
    MatF z_old = mo + vo.cwiseSqrt().cwiseProduct(eps);
    MatF zg_new = e_new.encode_means(xg);
    MatF zg_old = e_old.encode_means(xg);

    ad::Tape<float> tape;
    nn::Ctx<float> new_ctx(tape, actor_new.actor_params(), do_step);
    MatF in_new(actor_new.input_dim(), b), in_old(actor_old.input_dim(), b);
    if (actor_new.goal_conditioned()) {
      in_new << z_new, zg_new;
    } else {
      in_new = z_new;
    }
    if (actor_old.goal_conditioned()) {
      in_old << z_old, zg_old;
    } else {
      in_old = z_old;
    }
    model::GaussianVars<float> p_new = actor_new.actor_dist_on(new_ctx, tape.constant(in_new));
    model::GaussianVars<float> p_old = actor_old.actor_dist_t(tape, tape.constant(in_old));
    ad::Var<float> kl = ad::kl_diag(p_new.mean, p_new.var, p_old.mean, p_old.var);
    ad::Var<float> loss = ad::mean_all(kl);
    double value = double(loss.scalar());
    if (do_step) {
      actor_new.actor_params().zero_grad();
      tape.backward(loss);
      new_ctx.collect_grads();
      actor_new.actor_opt().step(actor_new.actor_params());
    }
    return value;
  };

  stats.initial = objective_and_maybe_step(false, 0, observations.size());
  for (int e = 0; e < epochs; ++e) {
    for (std::size_t lo = 0; lo < observations.size(); lo += std::size_t(batch_size)) {
      std::size_t hi = std::min(observations.size(), lo + std::size_t(batch_size));
      objective_and_maybe_step(true, lo, hi);
    }
  }
  stats.final_ = objective_and_maybe_step(false, 0, observations.size());
  return stats;
}

// ---- protocol ----

evalr::ProtocolResult run_protocol(const RunConfig& base_cfg, int n_models, int n_tasks,
                                   int parallelism) {
  std::vector<evalr::ProtocolRow> rows;
  rows.resize(std::size_t(n_models));
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      int m = next.fetch_add(1);
      if (m >= n_models) return;
      evalr::ProtocolRow row;
      row.seed = base_cfg.seed + std::uint64_t(m);
      try {
        RunConfig cfg = base_cfg;
        cfg.seed = row.seed;
        cfg.out_dir = base_cfg.out_dir + "/model_" + std::to_string(m);
        Trainer t(cfg);
        t.run();
        envs::ActFn policy = evalr::make_policy(t.lce(), t.agent());
        evalr::EvalReport rep = evalr::percent_goal(
            t.env(), policy, n_tasks, t.env().spec().horizon,
            substream_seed(cfg.seed, hash_name("protocol-eval")), nullptr);
        row.mean = rep.mean;
        row.stderr_episodes = rep.stderr_episodes;
        row.env_samples = t.train_steps_consumed();
      } catch (const std::exception& e) {
        row.failed = true;
      }
      rows[std::size_t(m)] = row;
    }
  };
  std::vector<std::thread> threads;
  int nthreads = std::max(1, std::min(parallelism, n_models));
  for (int i = 0; i < nthreads; ++i) threads.emplace_back(worker);
  for (auto& th : threads) th.join();
  return evalr::aggregate_protocol(rows);
}

}  // namespace carl::train
