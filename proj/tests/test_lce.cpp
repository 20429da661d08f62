#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "test_util.hpp"

#include "carl/io/checkpoint.hpp"
#include "carl/lce.hpp"

#include <cmath>

using namespace carl;
using namespace carl::model;

namespace {

// tiny fully-connected instance for gradient work
LceArch toy_arch(int n_z = 2, int action_dim = 2, nn::Act act = nn::Act::kTanh) {
  LceArch a;
  a.env = "toy";
  a.n_z = n_z;
  a.action_dim = action_dim;
  a.frames = 1;
  a.height = 3;
  a.width = 4;
  a.enc_widths = {7, 6};
  a.dec_widths = {6, 7};
  a.dyn_widths = {5, 5};
  a.bwd_nz = 3;
  a.bwd_na = 3;
  a.bwd_nx = 4;
  a.bwd_joint = 5;
  a.act = act;
  return a;
}

}  // namespace

TEST_CASE("head dimensions follow the per-environment tables") {
  Rng rng(1);
  {
    LceArch a = arch_for(envs::EnvName::kPlanar);
    LceF m = LceF::create(a, rng);
    VecF x = VecF::Zero(1600);
    DiagGaussian g = m.encode(x);
    CHECK(g.mean.size() == 2);
    CHECK(g.var.size() == 2);
    CHECK((g.var.array() >= float(kVarianceFloor)).all());
    PixelBernoulli px = m.decode(VecF::Zero(2));
    CHECK(px.logits.size() == 1600);
    DiagGaussian f = m.transition(VecF::Zero(2), VecF::Zero(2));
    CHECK(f.mean.size() == 2);
    DiagGaussian b = m.backward_encode(x, VecF::Zero(2), VecF::Zero(2));
    CHECK(b.mean.size() == 2);
    CHECK(b.var.size() == 2);

    // pure function: same input twice gives identical outputs
    DiagGaussian g2 = m.encode(x);
    CHECK((g.mean - g2.mean).cwiseAbs().maxCoeff() == 0.0f);

    CHECK_THROWS_AS(m.encode(VecF::Zero(1601)), InputError);
    VecF bad = VecF::Zero(2);
    bad[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(m.decode(bad), InputError);
  }
  {
    LceArch a = arch_for(envs::EnvName::kSwingup);
    LceF m = LceF::create(a, rng);
    DiagGaussian g = m.encode(VecF::Zero(4608));
    CHECK(g.mean.size() == 3);
    CHECK(m.decode(VecF::Zero(3)).logits.size() == 4608);
  }
}

TEST_CASE("parameter counts match the layer tables exactly") {
  auto dense = [](int in, int out) { return long(in) * out + out; };
  Rng rng(2);
  {
    LceF m = LceF::create(arch_for(envs::EnvName::kPlanar), rng);
    long expect = dense(1600, 300) + dense(300, 300) + dense(300, 4)   // encoder
                  + dense(2, 300) + dense(300, 300) + dense(300, 1600)  // decoder
                  + dense(4, 20) + dense(20, 20) + dense(20, 4)         // dynamics
                  + dense(2, 5) + dense(2, 5) + dense(1600, 100)        // backward branches
                  + dense(110, 100) + dense(100, 4);                    // joint + head
    CHECK(m.params.parameter_count() == expect);
  }
  {
    LceF m = LceF::create(arch_for(envs::EnvName::kSwingup), rng);
    long expect = dense(4608, 500) + dense(500, 500) + dense(500, 6) + dense(3, 500) +
                  dense(500, 500) + dense(500, 4608) + dense(4, 30) + dense(30, 30) +
                  dense(30, 6) + dense(3, 10) + dense(1, 10) + dense(4608, 200) +
                  dense(220, 200) + dense(200, 6);
    CHECK(m.params.parameter_count() == expect);
  }
  auto conv = [](int c_in, int c_out, int k) { return long(c_out) * (c_in * k * k) + c_out; };
  {
    LceF m = LceF::create(arch_for(envs::EnvName::kCartpole), rng);
    long enc = conv(2, 32, 5) + conv(32, 32, 5) + conv(32, 32, 5) + conv(32, 10, 5) +
               dense(1000, 200) + dense(200, 16);
    long dec = dense(8, 200) + dense(200, 1000) + dense(1000, 100) + conv(1, 32, 5) +
               conv(32, 32, 5) + conv(32, 32, 5) + conv(32, 2, 5);
    long dyn = dense(9, 40) + dense(40, 40) + dense(40, 16);
    long bwd = dense(8, 10) + dense(1, 10) + dense(12800, 300) + dense(320, 300) +
               dense(300, 16);
    CHECK(m.params.parameter_count() == enc + dec + dyn + bwd);
  }
  {
    LceF m = LceF::create(arch_for(envs::EnvName::kThreepole), rng);
    long enc = conv(2, 32, 5) + conv(32, 32, 5) + conv(32, 32, 5) + conv(32, 10, 5) +
               dense(1000, 500) + dense(500, 16);
    long dec = dense(8, 200) + dense(200, 1000) + dense(1000, 100) + conv(1, 32, 5) +
               conv(32, 32, 5) + conv(32, 32, 5) + conv(32, 2, 5);
    long dyn = dense(11, 40) + dense(40, 40) + dense(40, 16);
    long bwd = dense(8, 10) + dense(3, 10) + dense(12800, 400) + dense(420, 400) +
               dense(400, 16);
    CHECK(m.params.parameter_count() == enc + dec + dyn + bwd);
  }
}

TEST_CASE("conv model forward shapes") {
  Rng rng(3);
  LceF m = LceF::create(arch_for(envs::EnvName::kCartpole), rng);
  VecF x = VecF::Random(2 * 80 * 80) * 0.5f + VecF::Constant(2 * 80 * 80, 0.5f);
  DiagGaussian g = m.encode(x);
  CHECK(g.mean.size() == 8);
  PixelBernoulli px = m.decode(g.mean);
  CHECK(px.logits.size() == 2 * 80 * 80);
}

TEST_CASE("zero decoder weights give per-pixel probability one half") {
  Rng rng(4);
  LceD m = LceD::create(toy_arch(), rng);
  // zero the decoder head so the logits vanish
  for (auto& e : m.params.entries())
    if (e.name.rfind("decoder", 0) == 0) e.value.setZero();
  PixelBernoulliT<double> px = m.decode(VecD::Ones(2));
  for (int i = 0; i < px.logits.size(); ++i) {
    double p = 1.0 / (1.0 + std::exp(-px.logits[i]));
    CHECK(p == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("reparam_sample: zero noise returns the mean; floored variance stays bounded") {
  DiagGaussianT<double> d{(VecD(2) << 1.0, -2.0).finished(),
                          (VecD(2) << kVarianceFloor, 4.0).finished()};
  VecD zero = VecD::Zero(2);
  CHECK((reparam_sample(d, zero) - d.mean).cwiseAbs().maxCoeff() == 0.0);

  VecD noise = (VecD(2) << 3.0, -1.0).finished();
  VecD out = reparam_sample(d, noise);
  CHECK(std::abs(out[0] - d.mean[0]) <= std::sqrt(kVarianceFloor) * 3.0 + 1e-15);
  CHECK(out[1] == doctest::Approx(-2.0 + 2.0 * -1.0));
  CHECK_THROWS_AS(reparam_sample(d, VecD(VecD::Zero(3))), InputError);
}

TEST_CASE("reparam_sample Monte-Carlo mean matches the distribution mean") {
  DiagGaussianT<double> d{(VecD(2) << 0.7, -1.3).finished(), (VecD(2) << 2.0, 0.5).finished()};
  Rng rng(11);
  const int n = 100000;
  VecD acc = VecD::Zero(2);
  for (int i = 0; i < n; ++i) acc += reparam_sample(d, rng.normal_vec<double>(2));
  VecD mc = acc / double(n);
  for (int i = 0; i < 2; ++i) {
    double tol = 3.0 * std::sqrt(d.var[i]) / std::sqrt(double(n));
    CHECK(std::abs(mc[i] - d.mean[i]) < tol);
  }
}

TEST_CASE("kl_diag_gaussian: closed form against a Monte-Carlo oracle") {
  DiagGaussianT<double> p{(VecD(1) << 1.0).finished(), (VecD(1) << 1.0).finished()};
  DiagGaussianT<double> q{(VecD(1) << 0.0).finished(), (VecD(1) << 1.0).finished()};
  CHECK(kl_diag_gaussian(p, q) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(kl_diag_gaussian(p, p) == doctest::Approx(0.0));

  DiagGaussianT<double> a{(VecD(2) << 0.3, -0.8).finished(), (VecD(2) << 1.7, 0.4).finished()};
  DiagGaussianT<double> b{(VecD(2) << -0.5, 0.2).finished(), (VecD(2) << 0.9, 2.1).finished()};
  double exact = kl_diag_gaussian(a, b);
  Rng rng(13);
  const int n = 1000000;
  double acc = 0.0;
  auto logpdf = [](const DiagGaussianT<double>& d, const VecD& x) {
    double lp = 0.0;
    for (int i = 0; i < x.size(); ++i) {
      double diff = x[i] - d.mean[i];
      lp += -0.5 * std::log(2.0 * M_PI * d.var[i]) - diff * diff / (2.0 * d.var[i]);
    }
    return lp;
  };
  for (int i = 0; i < n; ++i) {
    VecD x = reparam_sample(a, rng.normal_vec<double>(2));
    acc += logpdf(a, x) - logpdf(b, x);
  }
  double mc = acc / double(n);
  CHECK(std::abs(mc - exact) / exact < 0.01);
}

TEST_CASE("gradients of every head match finite differences") {
  Rng rng(17);
  LceD m = LceD::create(toy_arch(), rng);
  Rng noise_rng(18);
  MatD x = noise_rng.normal_mat<double>(12, 2).cwiseAbs().cwiseMin(1.0);
  MatD xn = noise_rng.normal_mat<double>(12, 2).cwiseAbs().cwiseMin(1.0);
  MatD a = noise_rng.normal_mat<double>(2, 2);
  MatD eps = noise_rng.normal_mat<double>(2, 2);

  // encoder + decoder path
  double worst_ed = testutil::gradcheck<double>(m.params, [&](nn::Ctx<double>& ctx) {
    GaussianVars<double> enc = m.encode_t(ctx, ctx.tape().constant(x));
    ad::Var<double> z = ad::reparam(enc.mean, enc.var, ctx.tape().constant(eps));
    return ad::mean_all(ad::bce_logits(m.decode_logits_t(ctx, z), x));
  });
  CHECK(worst_ed < 1e-4);

  // dynamics head
  double worst_f = testutil::gradcheck<double>(m.params, [&](nn::Ctx<double>& ctx) {
    GaussianVars<double> enc = m.encode_t(ctx, ctx.tape().constant(x));
    GaussianVars<double> f = m.transition_t(ctx, enc.mean, ctx.tape().constant(a));
    return ad::mean_all(ad::add(ad::square(f.mean), f.var));
  });
  CHECK(worst_f < 1e-4);

  // backward head
  double worst_b = testutil::gradcheck<double>(m.params, [&](nn::Ctx<double>& ctx) {
    GaussianVars<double> enc_n = m.encode_t(ctx, ctx.tape().constant(xn));
    GaussianVars<double> b = m.backward_t(ctx, ctx.tape().constant(x), enc_n.mean,
                                          ctx.tape().constant(a));
    return ad::mean_all(ad::add(ad::square(b.mean), b.var));
  });
  CHECK(worst_b < 1e-4);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  Rng rng(23);
  LceF m = LceF::create(toy_arch(), rng);
  nlohmann::json manifest;
  io::save_param_store(m.params, "/tmp/carl_lce_ckpt.bin", manifest, true);

  LceF m2 = LceF::create(toy_arch(), rng);  // different random init
  io::load_param_store(m2.params, "/tmp/carl_lce_ckpt.bin", manifest);
  for (int i = 0; i < m.params.size(); ++i) {
    CHECK((m.params.at(i).value - m2.params.at(i).value).cwiseAbs().maxCoeff() == 0.0f);
  }

  // architecture mismatch is an integrity error
  LceArch other = toy_arch(3, 2);
  LceF m3 = LceF::create(other, rng);
  CHECK_THROWS_AS(io::load_param_store(m3.params, "/tmp/carl_lce_ckpt.bin", manifest),
                  IntegrityError);
}
