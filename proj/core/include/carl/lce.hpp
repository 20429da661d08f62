#pragma once

#include "carl/envs/env.hpp"
#include "carl/nn.hpp"

#include <string>
#include <vector>

namespace carl::model {

// Value-level diagonal Gaussian (mean/variance pairs) and Bernoulli logits.
template <class S>
struct DiagGaussianT {
  VecX<S> mean;
  VecX<S> var;
};
using DiagGaussian = DiagGaussianT<float>;

template <class S>
struct PixelBernoulliT {
  VecX<S> logits;
};
using PixelBernoulli = PixelBernoulliT<float>;

// Tape-level distribution heads.
template <class S>
struct GaussianVars {
  ad::Var<S> mean;
  ad::Var<S> var;
};

inline constexpr double kVarianceFloor = 1e-5;

// z = mean + sqrt(var) .* noise
template <class S>
VecX<S> reparam_sample(const DiagGaussianT<S>& d, const VecX<S>& noise) {
  if (noise.size() != d.mean.size()) throw InputError("reparam noise dimension mismatch");
  return d.mean.array() + d.var.array().sqrt() * noise.array();
}

// closed-form KL between diagonal Gaussians
template <class S>
S kl_diag_gaussian(const DiagGaussianT<S>& p, const DiagGaussianT<S>& q) {
  if (p.mean.size() != q.mean.size()) throw InputError("KL dimension mismatch");
  S kl = S(0);
  for (int i = 0; i < p.mean.size(); ++i) {
    S ratio = q.var[i] / p.var[i];
    S diff = p.mean[i] - q.mean[i];
    kl += S(0.5) * (std::log(ratio) + (p.var[i] + diff * diff) / q.var[i] - S(1));
  }
  return kl;
}

struct ConvLayerSpec {
  int c_out = 0, k = 5, stride = 1, pad = 2;
  bool upsample_before = false;  // decoder path: 2x upsample ahead of the conv
};

// Architecture description; per-environment tables mirror the benchmark
// configuration, and toy instances are built directly by tests.
struct LceArch {
  std::string env = "planar";
  int n_z = 2;
  int action_dim = 2;
  int frames = 1, height = 40, width = 40;
  bool conv = false;
  std::vector<int> enc_widths{300, 300};  // hidden widths (head appended)
  std::vector<int> dec_widths{300, 300};
  std::vector<int> dyn_widths{20, 20};
  std::vector<ConvLayerSpec> enc_conv;  // used when conv = true
  int enc_dense = 200;                  // dense width between conv trunk and head
  std::vector<int> dec_dense{200, 1000, 100};
  std::vector<ConvLayerSpec> dec_conv;
  int bwd_nz = 5, bwd_na = 5, bwd_nx = 100, bwd_joint = 100;
  nn::Act act = nn::Act::kRelu;
  bool residual_dynamics = true;
  double variance_floor = kVarianceFloor;

  int obs_dim() const { return frames * height * width; }
};

LceArch arch_for(envs::EnvName name);

// The four-network latent controllable embedding. Forward passes are pure in
// (parameters, inputs); batches are (dim x B) matrices.
template <class S>
class Lce {
 public:
  LceArch arch;
  nn::ParamStore<S> params;

  static Lce create(const LceArch& a, Rng& rng) {
    Lce m;
    m.arch = a;
    const int nz2 = 2 * a.n_z;
    if (!a.conv) {
      std::vector<int> enc = a.enc_widths;
      enc.push_back(nz2);
      m.enc_mlp_ = nn::Mlp<S>::create(m.params, "encoder", a.obs_dim(), enc, a.act,
                                      nn::Act::kIdentity, rng);
      std::vector<int> dec = a.dec_widths;
      dec.push_back(a.obs_dim());
      m.dec_mlp_ = nn::Mlp<S>::create(m.params, "decoder", a.n_z, dec, a.act,
                                      nn::Act::kIdentity, rng);
    } else {
      int c = a.frames, h = a.height, w = a.width;
      for (size_t i = 0; i < a.enc_conv.size(); ++i) {
        const auto& cs = a.enc_conv[i];
        nn::ConvMeta meta{c, h, w, cs.c_out, cs.k, cs.stride, cs.pad};
        m.enc_conv_.push_back(m.add_conv("encoder.conv" + std::to_string(i), meta, rng));
        c = cs.c_out;
        h = meta.h_out();
        w = meta.w_out();
      }
      m.enc_conv_out_ = c * h * w;
      m.enc_head_ = nn::Mlp<S>::create(m.params, "encoder.head", m.enc_conv_out_,
                                       {a.enc_dense, nz2}, a.act, nn::Act::kIdentity, rng);
      // decoder: dense chain, then conv/upsample trunk from a 1-channel map
      m.dec_head_ = nn::Mlp<S>::create(m.params, "decoder.head", a.n_z, a.dec_dense, a.act,
                                       a.act, rng);
      int side = int(std::lround(std::sqrt(double(a.dec_dense.back()))));
      int dc = 1, dh = side, dw = side;
      for (size_t i = 0; i < a.dec_conv.size(); ++i) {
        const auto& cs = a.dec_conv[i];
        if (cs.upsample_before) {
          dh *= 2;
          dw *= 2;
        }
        nn::ConvMeta meta{dc, dh, dw, cs.c_out, cs.k, cs.stride, cs.pad};
        m.dec_conv_.push_back(m.add_conv("decoder.conv" + std::to_string(i), meta, rng));
        m.dec_upsample_.push_back(cs.upsample_before);
        dc = cs.c_out;
        dh = meta.h_out();
        dw = meta.w_out();
      }
      if (dc * dh * dw != a.obs_dim()) throw ConfigError("decoder trunk output shape mismatch");
    }
    std::vector<int> dyn = a.dyn_widths;
    dyn.push_back(nz2);
    m.dyn_mlp_ = nn::Mlp<S>::create(m.params, "dynamics", a.n_z + a.action_dim, dyn, a.act,
                                    nn::Act::kIdentity, rng);
    m.bwd_z_ = nn::Mlp<S>::create(m.params, "backward.z", a.n_z, {a.bwd_nz}, a.act, a.act, rng);
    m.bwd_a_ = nn::Mlp<S>::create(m.params, "backward.a", a.action_dim, {a.bwd_na}, a.act, a.act,
                                  rng);
    m.bwd_x_ = nn::Mlp<S>::create(m.params, "backward.x", a.obs_dim(), {a.bwd_nx}, a.act, a.act,
                                  rng);
    m.bwd_joint_ = nn::Mlp<S>::create(m.params, "backward.joint",
                                      a.bwd_nz + a.bwd_na + a.bwd_nx, {a.bwd_joint, nz2}, a.act,
                                      nn::Act::kIdentity, rng);
    return m;
  }

  // ---- tape-level heads ----

  GaussianVars<S> encode_t(nn::Ctx<S>& ctx, ad::Var<S> x) const {
    check_rows(x, arch.obs_dim(), "encode");
    ad::Var<S> out;
    if (!arch.conv) {
      out = enc_mlp_.forward(ctx, x);
    } else {
      ad::Var<S> h = x;
      for (const auto& cl : enc_conv_)
        h = ad::relu(nn::conv2d(ctx, h, cl.w, cl.b, cl.meta));
      out = enc_head_.forward(ctx, h);
    }
    return split_gaussian(ctx, out);
  }

  ad::Var<S> decode_logits_t(nn::Ctx<S>& ctx, ad::Var<S> z) const {
    check_rows(z, arch.n_z, "decode");
    if (!arch.conv) return dec_mlp_.forward(ctx, z);
    ad::Var<S> h = dec_head_.forward(ctx, z);
    int side = int(std::lround(std::sqrt(double(arch.dec_dense.back()))));
    int dc = 1, dh = side, dw = side;
    for (size_t i = 0; i < dec_conv_.size(); ++i) {
      if (dec_upsample_[i]) {
        h = nn::upsample2x(ctx, h, dc, dh, dw);
        dh *= 2;
        dw *= 2;
      }
      const auto& cl = dec_conv_[i];
      h = nn::conv2d(ctx, h, cl.w, cl.b, cl.meta);
      if (i + 1 < dec_conv_.size()) h = ad::relu(h);
      dc = cl.meta.c_out;
      dh = cl.meta.h_out();
      dw = cl.meta.w_out();
    }
    return h;
  }

  GaussianVars<S> transition_t(nn::Ctx<S>& ctx, ad::Var<S> z, ad::Var<S> a) const {
    check_rows(z, arch.n_z, "transition");
    check_rows(a, arch.action_dim, "transition action");
    ad::Var<S> u = ad::concat_rows(z, a);
    ad::Var<S> out = dyn_mlp_.forward(ctx, u);
    GaussianVars<S> g = split_gaussian(ctx, out);
    if (arch.residual_dynamics) g.mean = ad::add(g.mean, z);
    return g;
  }

  // dynamics mean together with its directional derivative along (tz, ta)
  std::pair<ad::Var<S>, ad::Var<S>> transition_mean_tangent_t(nn::Ctx<S>& ctx, ad::Var<S> z,
                                                              ad::Var<S> a, ad::Var<S> tz,
                                                              ad::Var<S> ta) const {
    ad::Var<S> u = ad::concat_rows(z, a);
    ad::Var<S> tu = ad::concat_rows(tz, ta);
    auto [out, tout] = dyn_mlp_.forward_tangent(ctx, u, tu);
    ad::Var<S> mean = ad::slice_rows(out, 0, arch.n_z);
    ad::Var<S> tmean = ad::slice_rows(tout, 0, arch.n_z);
    if (arch.residual_dynamics) {
      mean = ad::add(mean, z);
      tmean = ad::add(tmean, tz);
    }
    return {mean, tmean};
  }

  GaussianVars<S> backward_t(nn::Ctx<S>& ctx, ad::Var<S> x, ad::Var<S> z_next,
                             ad::Var<S> a) const {
    check_rows(x, arch.obs_dim(), "backward_encode");
    check_rows(z_next, arch.n_z, "backward_encode z");
    check_rows(a, arch.action_dim, "backward_encode action");
    ad::Var<S> hz = bwd_z_.forward(ctx, z_next);
    ad::Var<S> ha = bwd_a_.forward(ctx, a);
    ad::Var<S> hx = bwd_x_.forward(ctx, x);
    ad::Var<S> joint = ad::concat_rows(ad::concat_rows(hz, ha), hx);
    return split_gaussian(ctx, bwd_joint_.forward(ctx, joint));
  }

  // ---- value-level operations ----

  DiagGaussianT<S> encode(const VecX<S>& x) const {
    require_finite(x, "encode input");
    ad::Tape<S> tape;
    nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(params), /*train=*/false);
    GaussianVars<S> g = encode_t(ctx, tape.constant(x));
    return {VecX<S>(g.mean.val().col(0)), VecX<S>(g.var.val().col(0))};
  }

  PixelBernoulliT<S> decode(const VecX<S>& z) const {
    require_finite(z, "decode input");
    ad::Tape<S> tape;
    nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(params), false);
    ad::Var<S> logits = decode_logits_t(ctx, tape.constant(z));
    return {VecX<S>(logits.val().col(0))};
  }

  DiagGaussianT<S> transition(const VecX<S>& z, const VecX<S>& a) const {
    require_finite(z, "transition latent");
    require_finite(a, "transition action");
    ad::Tape<S> tape;
    nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(params), false);
    GaussianVars<S> g = transition_t(ctx, tape.constant(z), tape.constant(a));
    return {VecX<S>(g.mean.val().col(0)), VecX<S>(g.var.val().col(0))};
  }

  DiagGaussianT<S> backward_encode(const VecX<S>& x, const VecX<S>& z_next,
                                   const VecX<S>& a) const {
    ad::Tape<S> tape;
    nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(params), false);
    GaussianVars<S> g =
        backward_t(ctx, tape.constant(x), tape.constant(z_next), tape.constant(a));
    return {VecX<S>(g.mean.val().col(0)), VecX<S>(g.var.val().col(0))};
  }

  // batched encoder means, used by evaluation and the latent maps
  MatX<S> encode_means(const MatX<S>& xs) const {
    ad::Tape<S> tape;
    nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(params), false);
    GaussianVars<S> g = encode_t(ctx, tape.constant(xs));
    return g.mean.val();
  }

  // batched value-level distributions (mean, var)
  std::pair<MatX<S>, MatX<S>> encode_batch(const MatX<S>& xs) const {
    ad::Tape<S> tape;
    nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(params), false);
    GaussianVars<S> g = encode_t(ctx, tape.constant(xs));
    return {g.mean.val(), g.var.val()};
  }
  std::pair<MatX<S>, MatX<S>> transition_batch(const MatX<S>& z, const MatX<S>& a) const {
    ad::Tape<S> tape;
    nn::Ctx<S> ctx(tape, const_cast<nn::ParamStore<S>&>(params), false);
    GaussianVars<S> g = transition_t(ctx, tape.constant(z), tape.constant(a));
    return {g.mean.val(), g.var.val()};
  }

 private:
  struct ConvLayer {
    int w = -1, b = -1;
    nn::ConvMeta meta;
  };

  ConvLayer add_conv(const std::string& name, const nn::ConvMeta& meta, Rng& rng) {
    int fan_in = meta.c_in * meta.k * meta.k;
    S bound = S(1) / S(std::sqrt(double(fan_in)));
    MatX<S> w(meta.c_out, fan_in);
    for (int c = 0; c < fan_in; ++c)
      for (int r = 0; r < meta.c_out; ++r) w(r, c) = S(rng.uniform(-bound, bound));
    MatX<S> b(meta.c_out, 1);
    for (int r = 0; r < meta.c_out; ++r) b(r, 0) = S(rng.uniform(-bound, bound));
    ConvLayer cl;
    cl.w = params.add(name + ".w", std::move(w));
    cl.b = params.add(name + ".b", std::move(b));
    cl.meta = meta;
    return cl;
  }

  GaussianVars<S> split_gaussian(nn::Ctx<S>&, ad::Var<S> out) const {
    ad::Var<S> mean = ad::slice_rows(out, 0, arch.n_z);
    ad::Var<S> logv = ad::slice_rows(out, arch.n_z, arch.n_z);
    ad::Var<S> var = ad::max_floor(ad::exp_(logv), S(arch.variance_floor));
    return {mean, var};
  }

  static void check_rows(ad::Var<S> v, int expect, const char* what) {
    if (v.rows() != expect)
      throw InputError(std::string(what) + ": expected " + std::to_string(expect) +
                       " rows, got " + std::to_string(v.rows()));
  }
  static void require_finite(const VecX<S>& v, const char* what) {
    for (int i = 0; i < v.size(); ++i)
      if (!std::isfinite(double(v[i]))) throw InputError(std::string(what) + " is non-finite");
  }

  nn::Mlp<S> enc_mlp_, dec_mlp_, dyn_mlp_;
  nn::Mlp<S> enc_head_, dec_head_;
  nn::Mlp<S> bwd_z_, bwd_a_, bwd_x_, bwd_joint_;
  std::vector<ConvLayer> enc_conv_, dec_conv_;
  std::vector<bool> dec_upsample_;
  int enc_conv_out_ = 0;
};

using LceF = Lce<float>;
using LceD = Lce<double>;

}  // namespace carl::model
