#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "test_util.hpp"

#include "carl/ad.hpp"
#include "carl/nn.hpp"
#include "carl/rng.hpp"

using namespace carl;
using D = double;

TEST_CASE("matmul chain gradients match finite differences") {
  Rng rng(7);
  nn::ParamStore<D> ps;
  nn::Mlp<D> net = nn::Mlp<D>::create(ps, "net", 4, {6, 5, 3}, nn::Act::kTanh,
                                      nn::Act::kIdentity, rng);
  MatD x = rng.normal_mat<D>(4, 3);
  double worst = testutil::gradcheck<D>(ps, [&](nn::Ctx<D>& ctx) {
    return ad::mean_all(ad::square(net.forward(ctx, ctx.tape().constant(x))));
  });
  CHECK(worst < 1e-6);
}

TEST_CASE("elementwise op gradients") {
  Rng rng(3);
  nn::ParamStore<D> ps;
  int w = ps.add("w", rng.normal_mat<D>(5, 2));
  MatD target = rng.normal_mat<D>(5, 2);
  double worst = testutil::gradcheck<D>(ps, [&](nn::Ctx<D>& ctx) {
    ad::Var<D> v = ctx.p(w);
    ad::Var<D> s = ad::sigmoid(v);
    ad::Var<D> mix = ad::add(ad::cmul(s, ad::exp_(ad::scale(v, D(0.3)))),
                             ad::softplus(ad::sub(v, ctx.tape().constant(target))));
    ad::Var<D> q = ad::cdiv(ad::square(mix), ad::add_scalar(ad::square(v), D(1.5)));
    return ad::mean_all(ad::log_(ad::add_scalar(q, D(1))));
  });
  CHECK(worst < 1e-6);
}

TEST_CASE("reductions, slicing, and broadcast ops") {
  Rng rng(11);
  nn::ParamStore<D> ps;
  int w = ps.add("w", rng.normal_mat<D>(6, 4));
  MatD row = rng.normal_mat<D>(1, 4);
  double worst = testutil::gradcheck<D>(ps, [&](nn::Ctx<D>& ctx) {
    ad::Var<D> v = ctx.p(w);
    ad::Var<D> top = ad::slice_rows(v, 0, 3);
    ad::Var<D> bottom = ad::slice_rows(v, 3, 3);
    ad::Var<D> cat = ad::concat_rows(ad::tanh_(top), bottom);
    ad::Var<D> weighted = ad::row_bcast_mul(cat, ctx.tape().constant(row));
    ad::Var<D> per = ad::sum_cols(weighted);
    return ad::mean_all(ad::square(per));
  });
  CHECK(worst < 1e-6);
}

TEST_CASE("bce_logits matches manual bernoulli NLL and its gradient") {
  Rng rng(5);
  nn::ParamStore<D> ps;
  int w = ps.add("logits", rng.normal_mat<D>(4, 3));
  MatD target = (rng.normal_mat<D>(4, 3).array() > 0).cast<D>().matrix();

  ad::Tape<D> tape;
  nn::Ctx<D> ctx(tape, ps, false);
  ad::Var<D> nll = ad::bce_logits(ctx.p(w), target);
  for (int j = 0; j < 3; ++j) {
    double manual = 0.0;
    for (int i = 0; i < 4; ++i) {
      double l = ps.at(w).value(i, j), t = target(i, j);
      double p = 1.0 / (1.0 + std::exp(-l));
      manual += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    }
    CHECK(nll.val()(0, j) == doctest::Approx(manual).epsilon(1e-9));
  }

  double worst = testutil::gradcheck<D>(ps, [&](nn::Ctx<D>& c) {
    return ad::mean_all(ad::bce_logits(c.p(w), target));
  });
  CHECK(worst < 1e-6);
}

TEST_CASE("gaussian logpdf and diagonal KL composites") {
  Rng rng(13);
  nn::ParamStore<D> ps;
  int m1 = ps.add("m1", rng.normal_mat<D>(3, 2));
  int lv1 = ps.add("lv1", rng.normal_mat<D>(3, 2));
  int m2 = ps.add("m2", rng.normal_mat<D>(3, 2));
  int lv2 = ps.add("lv2", rng.normal_mat<D>(3, 2));
  MatD x = rng.normal_mat<D>(3, 2);

  // kl(p||p) = 0
  {
    ad::Tape<D> tape;
    nn::Ctx<D> ctx(tape, ps, false);
    ad::Var<D> v = ad::exp_(ctx.p(lv1));
    ad::Var<D> kl = ad::kl_diag(ctx.p(m1), v, ctx.p(m1), v);
    CHECK(kl.val().cwiseAbs().maxCoeff() < 1e-12);
  }
  // 1-dim closed form: KL(N(1,1) || N(0,1)) = 0.5
  {
    ad::Tape<D> tape;
    MatD one = MatD::Ones(1, 1), zero = MatD::Zero(1, 1);
    ad::Var<D> kl = ad::kl_diag(tape.constant(one), tape.constant(one), tape.constant(zero),
                                tape.constant(one));
    CHECK(kl.val()(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  }
  double worst = testutil::gradcheck<D>(ps, [&](nn::Ctx<D>& c) {
    ad::Var<D> v1 = ad::exp_(c.p(lv1));
    ad::Var<D> v2 = ad::exp_(c.p(lv2));
    ad::Var<D> lp = ad::gaussian_logpdf(c.tape().constant(x), c.p(m1), v1);
    ad::Var<D> kl = ad::kl_diag(c.p(m1), v1, c.p(m2), v2);
    return ad::mean_all(ad::add(lp, kl));
  });
  CHECK(worst < 1e-6);
}

TEST_CASE("min_ routes gradients to the smaller argument") {
  nn::ParamStore<D> ps;
  MatD av(1, 2), bv(1, 2);
  av << 1.0, 5.0;
  bv << 2.0, 3.0;
  int a = ps.add("a", av);
  int b = ps.add("b", bv);
  ad::Tape<D> tape;
  nn::Ctx<D> ctx(tape, ps, true);
  ad::Var<D> loss = ad::sum_all(ad::min_(ctx.p(a), ctx.p(b)));
  ps.zero_grad();
  tape.backward(loss);
  ctx.collect_grads();
  CHECK(ps.at(a).grad(0, 0) == 1.0);
  CHECK(ps.at(a).grad(0, 1) == 0.0);
  CHECK(ps.at(b).grad(0, 0) == 0.0);
  CHECK(ps.at(b).grad(0, 1) == 1.0);
}

TEST_CASE("conv2d and upsample gradients match finite differences") {
  Rng rng(17);
  nn::ParamStore<D> ps;
  nn::ConvMeta meta{2, 6, 6, 3, 3, 2, 1};
  int fan_in = meta.c_in * meta.k * meta.k;
  int w = ps.add("w", rng.normal_mat<D>(meta.c_out, fan_in) * 0.3);
  int b = ps.add("b", rng.normal_mat<D>(meta.c_out, 1) * 0.1);
  int x = ps.add("x", rng.normal_mat<D>(meta.c_in * meta.h * meta.w, 2));
  double worst = testutil::gradcheck<D>(ps, [&](nn::Ctx<D>& ctx) {
    ad::Var<D> y = nn::conv2d(ctx, ctx.p(x), w, b, meta);
    ad::Var<D> u = nn::upsample2x(ctx, ad::tanh_(y), meta.c_out, meta.h_out(), meta.w_out());
    return ad::mean_all(ad::square(u));
  });
  CHECK(worst < 1e-6);
}

TEST_CASE("mlp forward_tangent computes the input JVP") {
  Rng rng(23);
  nn::ParamStore<D> ps;
  nn::Mlp<D> net =
      nn::Mlp<D>::create(ps, "net", 3, {8, 2}, nn::Act::kTanh, nn::Act::kIdentity, rng);
  MatD x = rng.normal_mat<D>(3, 1);
  MatD dir = rng.normal_mat<D>(3, 1);

  ad::Tape<D> tape;
  nn::Ctx<D> ctx(tape, ps, false);
  auto [y, ty] = net.forward_tangent(ctx, tape.constant(x), tape.constant(dir));

  const double h = 1e-6;
  ad::Tape<D> tp, tm;
  nn::Ctx<D> cp(tp, ps, false), cm(tm, ps, false);
  MatD yp = net.forward(cp, tp.constant(MatD(x + h * dir))).val();
  MatD ym = net.forward(cm, tm.constant(MatD(x - h * dir))).val();
  MatD fd = (yp - ym) / (2.0 * h);
  CHECK((ty.val() - fd).cwiseAbs().maxCoeff() < 1e-7);
  CHECK((y.val() - net.forward(cp, tp.constant(x)).val()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("adam step matches the reference update") {
  nn::ParamStore<D> ps;
  MatD w0(1, 1);
  w0 << 2.0;
  int w = ps.add("w", w0);
  nn::Adam<D> opt;
  opt.lr = 0.1;
  // minimize (w-1)^2 / 2 -> gradient w - 1
  for (int i = 0; i < 3; ++i) {
    ps.zero_grad();
    ps.at(w).grad(0, 0) = ps.at(w).value(0, 0) - 1.0;
    opt.step(ps);
  }
  // reference simulation
  double v = 2.0, m = 0, s = 0;
  for (int i = 1; i <= 3; ++i) {
    double g = v - 1.0;
    m = 0.9 * m + 0.1 * g;
    s = 0.999 * s + 0.001 * g * g;
    double mh = m / (1 - std::pow(0.9, i));
    double sh = s / (1 - std::pow(0.999, i));
    v -= 0.1 * mh / (std::sqrt(sh) + 1e-8);
  }
  CHECK(ps.at(w).value(0, 0) == doctest::Approx(v).epsilon(1e-12));
}
