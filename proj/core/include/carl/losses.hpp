#pragma once

#include "carl/lce.hpp"

#include <functional>
#include <optional>

namespace carl::losses {

using model::GaussianVars;
using model::Lce;

enum class Regime { kOffline, kOnline, kValueGuided };

inline Regime regime_from_string(const std::string& s) {
  if (s == "offline") return Regime::kOffline;
  if (s == "online") return Regime::kOnline;
  if (s == "value_guided") return Regime::kValueGuided;
  throw ConfigError("unknown regime: " + s);
}

inline std::string to_string(Regime r) {
  switch (r) {
    case Regime::kOffline: return "offline";
    case Regime::kOnline: return "online";
    case Regime::kValueGuided: return "value_guided";
  }
  return "?";
}

// Hyper-parameters of the combined objective.
struct LossWeights {
  double lambda_ed = 0.01;
  double lambda_p = 1.0;
  double lambda_c = 7.0;
  double lambda_cur = 1.0;
  double lambda_reg = 0.01;
  double det_recon_coeff = 0.3;
  double curvature_noise_var = 0.01;
  double tau_vg = 1.0 / 30.0;  // value-guidance temperature
  double gamma = 0.99;
  bool vae_enabled = false;  // auxiliary VAE term, off by default
  double vae_coeff = 0.01;
  double weight_clip_min = 0.1;
  double weight_clip_max = 10.0;

  void validate() const {
    auto nonneg = [](double v, const char* what) {
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ConfigError(std::string(what) + " must be finite and >= 0");
    };
    nonneg(lambda_ed, "lambda_ed");
    nonneg(lambda_p, "lambda_p");
    nonneg(lambda_c, "lambda_c");
    nonneg(lambda_cur, "lambda_cur");
    nonneg(lambda_reg, "lambda_reg");
    nonneg(curvature_noise_var, "curvature_noise_var");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0,1)");
  }
};

struct LossReport {
  double recon = 0, prediction = 0, consistency = 0, curvature = 0;
  double encoder_reg = 0, det_recon = 0, vae = 0;
  double total = 0;
  double weight_min = 1, weight_mean = 1, weight_max = 1;
};

// Frozen per-batch noise. Each loss term owns its draws so that regimes can
// be compared under identical streams.
template <class S>
struct LossNoise {
  MatX<S> recon_eps;   // z ~ E(.|x) for the reconstruction term
  MatX<S> cons_eps;    // z ~ E(.|x) for the consistency term
  MatX<S> next_eps;    // z' ~ E(.|x') posterior draw
  MatX<S> bwd_eps;     // z ~ B(.|x, z', a)
  MatX<S> cur_sample_eps;  // z ~ E(.|x) at which the curvature is probed
  MatX<S> cur_eps_z;       // standard normals, scaled by sqrt(noise_var)
  MatX<S> cur_eps_a;
  MatX<S> reg_new_eps, reg_old_eps;  // encoder regularizer draws

  static LossNoise draw(Rng& rng, int n_z, int action_dim, int batch) {
    LossNoise n;
    n.recon_eps = rng.normal_mat<S>(n_z, batch);
    n.cons_eps = rng.normal_mat<S>(n_z, batch);
    n.next_eps = rng.normal_mat<S>(n_z, batch);
    n.bwd_eps = rng.normal_mat<S>(n_z, batch);
    n.cur_sample_eps = rng.normal_mat<S>(n_z, batch);
    n.cur_eps_z = rng.normal_mat<S>(n_z, batch);
    n.cur_eps_a = rng.normal_mat<S>(action_dim, batch);
    n.reg_new_eps = rng.normal_mat<S>(n_z, batch);
    n.reg_old_eps = rng.normal_mat<S>(n_z, batch);
    return n;
  }
};

// Actor head used by the encoder regularizer and policy distillation: returns
// the pre-squash action Gaussian at a latent batch. Implementations create
// their own Ctx on the shared tape (typically with frozen parameters).
template <class S>
using ActorFn = std::function<GaussianVars<S>(ad::Tape<S>&, ad::Var<S> z)>;

// Value-side callbacks for the exponential-twisting weights; supplied by the
// SAC module. All value-level, no gradients.
template <class S>
struct ValueHooks {
  std::function<S(const VecX<S>& z, const VecX<S>& a, const VecX<S>& z_goal)> q_min;
  std::function<S(const VecX<S>& z, const VecX<S>& z_goal)> v_soft;
  std::function<S(const VecX<S>& z_next, const VecX<S>& z_goal, const VecX<S>& a)> reward;
};

// ---- per-term builders (tape level, per-sample rows 1 x B) ----

template <class S>
ad::Var<S> recon_terms(nn::Ctx<S>& ctx, const Lce<S>& m, const GaussianVars<S>& enc,
                       const MatX<S>& x, const MatX<S>& eps) {
  ad::Var<S> z = ad::reparam(enc.mean, enc.var, ctx.tape().constant(eps));
  return ad::bce_logits(m.decode_logits_t(ctx, z), x);
}

// Variational bound on -log P(x'|x,a) through the posterior draws
// z' ~ E(.|x'), z ~ B(.|x,z',a):
//   E[-log D(x'|z') - log F(z'|z,a) - log E(z|x) + log B(z|x,z',a) + log E(z'|x')].
// The last two terms are the log-density of the variational posterior itself.
template <class S>
ad::Var<S> prediction_terms(nn::Ctx<S>& ctx, const Lce<S>& m, const GaussianVars<S>& enc_x,
                            const GaussianVars<S>& enc_next, const MatX<S>& xn, ad::Var<S> a,
                            const MatX<S>& next_eps, const MatX<S>& bwd_eps, ad::Var<S> x) {
  ad::Tape<S>& t = ctx.tape();
  ad::Var<S> z_next = ad::reparam(enc_next.mean, enc_next.var, t.constant(next_eps));
  GaussianVars<S> bwd = m.backward_t(ctx, x, z_next, a);
  ad::Var<S> z = ad::reparam(bwd.mean, bwd.var, t.constant(bwd_eps));
  GaussianVars<S> f = m.transition_t(ctx, z, a);
  ad::Var<S> nll_dec = ad::bce_logits(m.decode_logits_t(ctx, z_next), xn);
  ad::Var<S> lp_f = ad::gaussian_logpdf(z_next, f.mean, f.var);
  ad::Var<S> lp_e = ad::gaussian_logpdf(z, enc_x.mean, enc_x.var);
  ad::Var<S> lp_b = ad::gaussian_logpdf(z, bwd.mean, bwd.var);
  ad::Var<S> lp_q_next = ad::gaussian_logpdf(z_next, enc_next.mean, enc_next.var);
  return ad::add(ad::sub(nll_dec, ad::add(lp_f, lp_e)), ad::add(lp_b, lp_q_next));
}

template <class S>
ad::Var<S> consistency_terms(nn::Ctx<S>& ctx, const Lce<S>& m, const GaussianVars<S>& enc_x,
                             const GaussianVars<S>& enc_next, ad::Var<S> a,
                             const MatX<S>& cons_eps) {
  ad::Var<S> z = ad::reparam(enc_x.mean, enc_x.var, ctx.tape().constant(cons_eps));
  GaussianVars<S> f = m.transition_t(ctx, z, a);
  return ad::kl_diag(enc_next.mean, enc_next.var, f.mean, f.var);
}

// Taylor-remainder magnitude of the dynamics mean around (z, a):
// || f(z+ez, a+ea) - f(z,a) - J(z,a) (ez, ea) ||_2 per sample.
template <class S>
ad::Var<S> curvature_terms_at(nn::Ctx<S>& ctx, const Lce<S>& m, ad::Var<S> z, ad::Var<S> a,
                              const MatX<S>& eps_z_std, const MatX<S>& eps_a_std,
                              double noise_var) {
  ad::Tape<S>& t = ctx.tape();
  S sd = S(std::sqrt(noise_var));
  MatX<S> ez = sd * eps_z_std;
  MatX<S> ea = sd * eps_a_std;
  ad::Var<S> ezc = t.constant(ez), eac = t.constant(ea);
  auto [mean, tangent] = m.transition_mean_tangent_t(ctx, z, a, ezc, eac);
  GaussianVars<S> fp = m.transition_t(ctx, ad::add(z, ezc), ad::add(a, eac));
  ad::Var<S> remainder = ad::sub(fp.mean, ad::add(mean, tangent));
  return ad::sqrt_(ad::sum_cols(ad::square(remainder)));
}

template <class S>
ad::Var<S> curvature_terms(nn::Ctx<S>& ctx, const Lce<S>& m, const MatX<S>& z, const MatX<S>& a,
                           const MatX<S>& eps_z_std, const MatX<S>& eps_a_std,
                           double noise_var) {
  ad::Tape<S>& t = ctx.tape();
  return curvature_terms_at(ctx, m, t.constant(z), t.constant(a), eps_z_std, eps_a_std,
                            noise_var);
}

// Action-marginal KL between the actor's distributions at fresh draws from
// the new and old encoders.
template <class S>
ad::Var<S> encoder_reg_terms(nn::Ctx<S>& ctx, const Lce<S>& m_new, const Lce<S>& m_old,
                             const ActorFn<S>& actor, const MatX<S>& x, const MatX<S>& eps_new,
                             const MatX<S>& eps_old) {
  ad::Tape<S>& t = ctx.tape();
  GaussianVars<S> enc_new = m_new.encode_t(ctx, t.constant(x));
  ad::Var<S> z_new = ad::reparam(enc_new.mean, enc_new.var, t.constant(eps_new));
  // old encoder is a frozen snapshot
  nn::Ctx<S> old_ctx(t, const_cast<nn::ParamStore<S>&>(m_old.params), /*train=*/false);
  GaussianVars<S> enc_old = m_old.encode_t(old_ctx, t.constant(x));
  ad::Var<S> z_old_det = t.constant(
      MatX<S>(enc_old.mean.val() + enc_old.var.val().cwiseSqrt().cwiseProduct(eps_old)));
  GaussianVars<S> pi_new = actor(t, z_new);
  GaussianVars<S> pi_old = actor(t, z_old_det);
  return ad::kl_diag(pi_new.mean, pi_new.var, pi_old.mean, pi_old.var);
}

template <class S>
ad::Var<S> det_recon_terms(nn::Ctx<S>& ctx, const Lce<S>& m, const GaussianVars<S>& enc_x,
                           ad::Var<S> a, const MatX<S>& xn) {
  GaussianVars<S> f = m.transition_t(ctx, enc_x.mean, a);
  return ad::bce_logits(m.decode_logits_t(ctx, f.mean), xn);
}

template <class S>
ad::Var<S> vae_terms(nn::Ctx<S>& ctx, const Lce<S>& m, const GaussianVars<S>& enc,
                     const MatX<S>& x, const MatX<S>& eps) {
  ad::Tape<S>& t = ctx.tape();
  ad::Var<S> z = ad::reparam(enc.mean, enc.var, t.constant(eps));
  ad::Var<S> nll = ad::bce_logits(m.decode_logits_t(ctx, z), x);
  int nz = int(enc.mean.rows());
  int b = int(enc.mean.cols());
  ad::Var<S> prior_mean = t.constant(MatX<S>::Zero(nz, b));
  ad::Var<S> prior_var = t.constant(MatX<S>::Ones(nz, b));
  return ad::add(nll, ad::kl_diag(enc.mean, enc.var, prior_mean, prior_var));
}

// ---- batch entry point ----

template <class S>
struct TotalLossInputs {
  const Lce<S>* m = nullptr;
  const Lce<S>* m_old = nullptr;  // previous-iteration snapshot (online/VG)
  ActorFn<S> actor;               // required with m_old
  MatX<S> x, a, x_next, x_goal;
  Regime mode = Regime::kOffline;
  const Eigen::RowVectorX<S>* value_weights = nullptr;  // VG: normalized, mean 1
};

template <class S>
std::pair<ad::Var<S>, LossReport> total_loss_t(nn::Ctx<S>& ctx, const TotalLossInputs<S>& in,
                                               const LossWeights& w, const LossNoise<S>& noise) {
  w.validate();
  if (in.mode == Regime::kValueGuided && in.value_weights == nullptr)
    throw ConfigError("value_guided mode requires value weights (critic and actor)");
  ad::Tape<S>& t = ctx.tape();
  const Lce<S>& m = *in.m;
  ad::Var<S> xc = t.constant(in.x);
  ad::Var<S> ac = t.constant(in.a);
  GaussianVars<S> enc_x = m.encode_t(ctx, xc);
  GaussianVars<S> enc_next = m.encode_t(ctx, t.constant(in.x_next));

  ad::Var<S> recon = recon_terms(ctx, m, enc_x, in.x, noise.recon_eps);
  ad::Var<S> pred = prediction_terms(ctx, m, enc_x, enc_next, in.x_next, ac, noise.next_eps,
                                     noise.bwd_eps, xc);
  ad::Var<S> cons = consistency_terms(ctx, m, enc_x, enc_next, ac, noise.cons_eps);
  ad::Var<S> z_cur = ad::reparam(enc_x.mean, enc_x.var, t.constant(noise.cur_sample_eps));
  ad::Var<S> cur = curvature_terms_at(ctx, m, z_cur, ac, noise.cur_eps_z, noise.cur_eps_a,
                                      w.curvature_noise_var);
  ad::Var<S> det = det_recon_terms(ctx, m, enc_x, ac, in.x_next);

  LossReport rep;
  const int b = int(in.x.cols());
  ad::Var<S> weights_row = t.constant(MatX<S>::Ones(1, b));
  if (in.mode == Regime::kValueGuided) {
    MatX<S> wr(1, b);
    wr.row(0) = *in.value_weights;
    weights_row = t.constant(wr);
    rep.weight_min = double(in.value_weights->minCoeff());
    rep.weight_max = double(in.value_weights->maxCoeff());
    rep.weight_mean = double(in.value_weights->mean());
    pred = ad::cmul(pred, weights_row);
    cons = ad::cmul(cons, weights_row);
  }

  ad::Var<S> total = ad::scale(ad::mean_all(recon), S(w.lambda_ed));
  total = ad::add(total, ad::scale(ad::mean_all(pred), S(w.lambda_p)));
  total = ad::add(total, ad::scale(ad::mean_all(cons), S(w.lambda_c)));
  total = ad::add(total, ad::scale(ad::mean_all(cur), S(w.lambda_cur)));
  total = ad::add(total, ad::scale(ad::mean_all(det), S(w.det_recon_coeff)));

  rep.recon = double(ad::mean_all(recon).scalar());
  rep.prediction = double(ad::mean_all(pred).scalar());
  rep.consistency = double(ad::mean_all(cons).scalar());
  rep.curvature = double(ad::mean_all(cur).scalar());
  rep.det_recon = double(ad::mean_all(det).scalar());

  if (in.mode != Regime::kOffline && in.m_old != nullptr) {
    if (!in.actor) throw ConfigError(to_string(in.mode) + " mode requires the actor snapshot");
    ad::Var<S> reg = encoder_reg_terms(ctx, m, *in.m_old, in.actor, in.x, noise.reg_new_eps,
                                       noise.reg_old_eps);
    total = ad::add(total, ad::scale(ad::mean_all(reg), S(w.lambda_reg)));
    rep.encoder_reg = double(ad::mean_all(reg).scalar());
  }
  if (w.vae_enabled) {
    ad::Var<S> vae = vae_terms(ctx, m, enc_x, in.x, noise.recon_eps);
    total = ad::add(total, ad::scale(ad::mean_all(vae), S(w.vae_coeff)));
    rep.vae = double(ad::mean_all(vae).scalar());
  }
  rep.total = double(total.scalar());
  return {total, rep};
}

// Raw exponential-twisting weight for one triplet: exp((tau/gamma) * w_hat)
// with w_hat = r(z', z_g, a) - Q(z, a) + gamma * V(z'); unclipped.
template <class S>
S value_weight_raw(const Lce<S>& m, const ValueHooks<S>& hooks, const VecX<S>& x, const VecX<S>& a,
                   const VecX<S>& x_next, const VecX<S>& x_goal, double tau_vg, double gamma,
                   Rng& rng) {
  VecX<S> z = model::reparam_sample(m.encode(x), rng.normal_vec<S>(m.arch.n_z));
  VecX<S> zn = model::reparam_sample(m.encode(x_next), rng.normal_vec<S>(m.arch.n_z));
  VecX<S> zg = model::reparam_sample(m.encode(x_goal), rng.normal_vec<S>(m.arch.n_z));
  S r = hooks.reward(zn, zg, a);
  S q = hooks.q_min(z, a, zg);
  S v = hooks.v_soft(zn, zg);
  if (!std::isfinite(double(q)) || !std::isfinite(double(v)))
    throw TrainingError("non-finite critic output in value_weight");
  S w_hat = r - q + S(gamma) * v;
  return S(std::exp(double(tau_vg) / gamma * double(w_hat)));
}

// Clipped to [clip_min, clip_max] then normalized to batch mean 1.
template <class S>
Eigen::RowVectorX<S> normalize_weights(Eigen::RowVectorX<S> w, double clip_min,
                                       double clip_max) {
  for (int i = 0; i < w.size(); ++i)
    w[i] = S(std::clamp(double(w[i]), clip_min, clip_max));
  S mean = w.mean();
  if (mean > S(0)) w /= mean;
  return w;
}

// ---- single-triplet value-level wrappers ----

template <class S>
double recon_loss(const Lce<S>& m, const VecX<S>& x, Rng& rng) {
  ad::Tape<S> tape;
  nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(m.params), false);
  MatX<S> xm = x;
  GaussianVars<S> enc = m.encode_t(ctx, tape.constant(xm));
  return double(recon_terms(ctx, m, enc, xm, rng.normal_mat<S>(m.arch.n_z, 1)).scalar());
}

template <class S>
double prediction_loss(const Lce<S>& m, const VecX<S>& x, const VecX<S>& a, const VecX<S>& xn,
                       Rng& rng) {
  ad::Tape<S> tape;
  nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(m.params), false);
  MatX<S> xm = x, xnm = xn, am = a;
  ad::Var<S> xc = tape.constant(xm);
  GaussianVars<S> enc_x = m.encode_t(ctx, xc);
  GaussianVars<S> enc_next = m.encode_t(ctx, tape.constant(xnm));
  return double(prediction_terms(ctx, m, enc_x, enc_next, xnm, tape.constant(am),
                                 rng.normal_mat<S>(m.arch.n_z, 1),
                                 rng.normal_mat<S>(m.arch.n_z, 1), xc)
                    .scalar());
}

template <class S>
double consistency_loss(const Lce<S>& m, const VecX<S>& x, const VecX<S>& a, const VecX<S>& xn,
                        Rng& rng) {
  ad::Tape<S> tape;
  nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(m.params), false);
  MatX<S> xm = x, xnm = xn, am = a;
  GaussianVars<S> enc_x = m.encode_t(ctx, tape.constant(xm));
  GaussianVars<S> enc_next = m.encode_t(ctx, tape.constant(xnm));
  return double(consistency_terms(ctx, m, enc_x, enc_next, tape.constant(am),
                                  rng.normal_mat<S>(m.arch.n_z, 1))
                    .scalar());
}

template <class S>
double curvature_loss(const Lce<S>& m, const VecX<S>& z, const VecX<S>& a, double noise_var,
                      Rng& rng) {
  ad::Tape<S> tape;
  nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(m.params), false);
  return double(curvature_terms(ctx, m, MatX<S>(z), MatX<S>(a),
                                rng.normal_mat<S>(m.arch.n_z, 1),
                                rng.normal_mat<S>(m.arch.action_dim, 1), noise_var)
                    .scalar());
}

template <class S>
double det_recon_loss(const Lce<S>& m, const VecX<S>& x, const VecX<S>& a, const VecX<S>& xn) {
  ad::Tape<S> tape;
  nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(m.params), false);
  MatX<S> xm = x, xnm = xn, am = a;
  GaussianVars<S> enc_x = m.encode_t(ctx, tape.constant(xm));
  return double(det_recon_terms(ctx, m, enc_x, tape.constant(am), xnm).scalar());
}

// Returns 0 when no previous snapshot exists yet (iteration 0 contract).
template <class S>
double encoder_reg_loss(const Lce<S>& m_new, const Lce<S>* m_old, const ActorFn<S>& actor,
                        const VecX<S>& x, Rng& rng) {
  if (m_old == nullptr) return 0.0;
  ad::Tape<S> tape;
  nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(m_new.params), false);
  MatX<S> eps_new = rng.normal_mat<S>(m_new.arch.n_z, 1);
  MatX<S> eps_old = rng.normal_mat<S>(m_new.arch.n_z, 1);
  return double(
      encoder_reg_terms(ctx, m_new, *m_old, actor, MatX<S>(x), eps_new, eps_old).scalar());
}

}  // namespace carl::losses
