#pragma once

#include "carl/ad.hpp"
#include "carl/rng.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace carl::nn {

enum class Act { kIdentity, kRelu, kTanh, kSoftplus, kSquare };

inline const char* act_name(Act a) {
  switch (a) {
    case Act::kIdentity: return "identity";
    case Act::kRelu: return "relu";
    case Act::kTanh: return "tanh";
    case Act::kSoftplus: return "softplus";
    case Act::kSquare: return "square";
  }
  return "?";
}
inline Act act_from_name(const std::string& s) {
  if (s == "identity") return Act::kIdentity;
  if (s == "relu") return Act::kRelu;
  if (s == "tanh") return Act::kTanh;
  if (s == "softplus") return Act::kSoftplus;
  if (s == "square") return Act::kSquare;
  throw ConfigError("unknown activation: " + s);
}

// Named parameter tensors with gradient and Adam state.
template <class S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    MatX<S> value;
    MatX<S> grad;
    MatX<S> m, v;  // Adam moments
  };

  int add(const std::string& name, MatX<S> init) {
    Entry e;
    e.name = name;
    e.grad = MatX<S>::Zero(init.rows(), init.cols());
    e.m = MatX<S>::Zero(init.rows(), init.cols());
    e.v = MatX<S>::Zero(init.rows(), init.cols());
    e.value = std::move(init);
    entries_.push_back(std::move(e));
    return int(entries_.size()) - 1;
  }

  Entry& at(int id) { return entries_[id]; }
  const Entry& at(int id) const { return entries_[id]; }
  int size() const { return int(entries_.size()); }

  void zero_grad() {
    for (auto& e : entries_) e.grad.setZero();
  }

  long parameter_count() const {
    long n = 0;
    for (const auto& e : entries_) n += long(e.value.size());
    return n;
  }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
};

// One training step's view: a tape plus lazily created parameter leaves.
template <class S>
class Ctx {
 public:
  Ctx(ad::Tape<S>& tape, ParamStore<S>& params, bool train = true)
      : tape_(tape), params_(params), train_(train), leaves_(params.size(), -1) {}

  ad::Var<S> p(int id) {
    if (leaves_[id] < 0) {
      ad::Var<S> v = tape_.leaf(params_.at(id).value, train_);
      leaves_[id] = v.idx;
    }
    return {&tape_, leaves_[id]};
  }

  // Adds tape gradients of all touched parameters into ParamStore grads.
  void collect_grads() {
    for (int id = 0; id < int(leaves_.size()); ++id) {
      if (leaves_[id] >= 0 && tape_.needs_grad(leaves_[id]))
        params_.at(id).grad += tape_.grad(ad::Var<S>{&tape_, leaves_[id]});
    }
  }

  ad::Tape<S>& tape() { return tape_; }
  ParamStore<S>& params() { return params_; }
  bool training() const { return train_; }

 private:
  ad::Tape<S>& tape_;
  ParamStore<S>& params_;
  bool train_;
  std::vector<int> leaves_;
};

template <class S>
ad::Var<S> activate(ad::Var<S> x, Act a) {
  switch (a) {
    case Act::kIdentity: return x;
    case Act::kRelu: return ad::relu(x);
    case Act::kTanh: return ad::tanh_(x);
    case Act::kSoftplus: return ad::softplus(x);
    case Act::kSquare: return ad::square(x);
  }
  return x;
}

template <class S>
struct Mlp {
  struct Layer {
    int w = -1, b = -1;
    int in = 0, out = 0;
    Act act = Act::kIdentity;
  };
  std::vector<Layer> layers;

  static Mlp create(ParamStore<S>& ps, const std::string& prefix, int in,
                    const std::vector<int>& widths, Act hidden, Act output, Rng& rng) {
    Mlp net;
    int d = in;
    for (size_t i = 0; i < widths.size(); ++i) {
      Layer l;
      l.in = d;
      l.out = widths[i];
      l.act = (i + 1 == widths.size()) ? output : hidden;
      S bound = S(1) / S(std::sqrt(double(d)));
      MatX<S> w(l.out, l.in);
      for (int c = 0; c < l.in; ++c)
        for (int r = 0; r < l.out; ++r) w(r, c) = S(rng.uniform(-bound, bound));
      MatX<S> b(l.out, 1);
      for (int r = 0; r < l.out; ++r) b(r, 0) = S(rng.uniform(-bound, bound));
      l.w = ps.add(prefix + ".w" + std::to_string(i), std::move(w));
      l.b = ps.add(prefix + ".b" + std::to_string(i), std::move(b));
      net.layers.push_back(l);
      d = widths[i];
    }
    return net;
  }

  ad::Var<S> forward(Ctx<S>& ctx, ad::Var<S> x) const {
    ad::Var<S> h = x;
    for (const Layer& l : layers)
      h = activate(ad::add_bias(ad::matmul(ctx.p(l.w), h), ctx.p(l.b)), l.act);
    return h;
  }

  // Primal plus directional derivative w.r.t. the input (JVP). ReLU masks are
  // treated as locally constant; smooth activations differentiate exactly.
  std::pair<ad::Var<S>, ad::Var<S>> forward_tangent(Ctx<S>& ctx, ad::Var<S> x,
                                                    ad::Var<S> tx) const {
    ad::Var<S> h = x, th = tx;
    for (const Layer& l : layers) {
      ad::Var<S> pre = ad::add_bias(ad::matmul(ctx.p(l.w), h), ctx.p(l.b));
      ad::Var<S> tpre = ad::matmul(ctx.p(l.w), th);
      switch (l.act) {
        case Act::kIdentity:
          h = pre;
          th = tpre;
          break;
        case Act::kRelu: {
          h = ad::relu(pre);
          MatX<S> mask = (pre.val().array() > S(0)).template cast<S>();
          th = ad::cmul(tpre, ctx.tape().constant(mask));
          break;
        }
        case Act::kTanh: {
          h = ad::tanh_(pre);
          ad::Var<S> d = ad::add_scalar(ad::neg(ad::square(h)), S(1));
          th = ad::cmul(tpre, d);
          break;
        }
        case Act::kSoftplus: {
          h = ad::softplus(pre);
          th = ad::cmul(tpre, ad::sigmoid(pre));
          break;
        }
        case Act::kSquare: {
          h = ad::square(pre);
          th = ad::cmul(tpre, ad::scale(pre, S(2)));
          break;
        }
      }
    }
    return {h, th};
  }
};

// ---- convolution ----

struct ConvMeta {
  int c_in = 0, h = 0, w = 0;
  int c_out = 0, k = 0, stride = 1, pad = 0;
  int h_out() const { return (h + 2 * pad - k) / stride + 1; }
  int w_out() const { return (w + 2 * pad - k) / stride + 1; }
};

// column matrix (c_in*k*k) x (h_out*w_out) for one flattened sample
template <class S>
void im2col(const ConvMeta& m, const S* x, MatX<S>& cols) {
  const int ho = m.h_out(), wo = m.w_out();
  cols.resize(m.c_in * m.k * m.k, ho * wo);
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      int col = oy * wo + ox;
      int iy0 = oy * m.stride - m.pad;
      int ix0 = ox * m.stride - m.pad;
      int row = 0;
      for (int c = 0; c < m.c_in; ++c) {
        const S* plane = x + c * m.h * m.w;
        for (int ky = 0; ky < m.k; ++ky) {
          int iy = iy0 + ky;
          for (int kx = 0; kx < m.k; ++kx, ++row) {
            int ix = ix0 + kx;
            cols(row, col) =
                (iy >= 0 && iy < m.h && ix >= 0 && ix < m.w) ? plane[iy * m.w + ix] : S(0);
          }
        }
      }
    }
  }
}

template <class S>
void col2im_add(const ConvMeta& m, const MatX<S>& cols, S* dx) {
  const int ho = m.h_out(), wo = m.w_out();
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      int col = oy * wo + ox;
      int iy0 = oy * m.stride - m.pad;
      int ix0 = ox * m.stride - m.pad;
      int row = 0;
      for (int c = 0; c < m.c_in; ++c) {
        S* plane = dx + c * m.h * m.w;
        for (int ky = 0; ky < m.k; ++ky) {
          int iy = iy0 + ky;
          for (int kx = 0; kx < m.k; ++kx, ++row) {
            int ix = ix0 + kx;
            if (iy >= 0 && iy < m.h && ix >= 0 && ix < m.w) plane[iy * m.w + ix] += cols(row, col);
          }
        }
      }
    }
  }
}

// x: (c_in*h*w x B) -> (c_out*h_out*w_out x B); weight (c_out x c_in*k*k)
template <class S>
ad::Var<S> conv2d(Ctx<S>& ctx, ad::Var<S> x, int w_id, int b_id, const ConvMeta& meta) {
  ad::Var<S> wv = ctx.p(w_id);
  ad::Var<S> bv = ctx.p(b_id);
  ad::Tape<S>& t = ctx.tape();
  const MatX<S>& xm = x.val();
  const int B = int(xm.cols());
  const int ho = meta.h_out(), wo = meta.w_out();
  MatX<S> out(meta.c_out * ho * wo, B);
  MatX<S> cols;
  for (int j = 0; j < B; ++j) {
    im2col(meta, xm.col(j).data(), cols);
    MatX<S> y = wv.val() * cols;
    y.colwise() += VecX<S>(bv.val().col(0));
    out.col(j) = Eigen::Map<const VecX<S>>(y.data(), y.size());
  }
  bool ng = t.needs_grad(x.idx) || t.needs_grad(wv.idx) || t.needs_grad(bv.idx);
  int xi = x.idx, wi = wv.idx, bi = bv.idx, oi = int(t.size());
  ConvMeta m = meta;
  return t.make(std::move(out), ng, [xi, wi, bi, oi, m, B](ad::Tape<S>& tp) {
    const MatX<S>& g = tp.grad({&tp, oi});
    const MatX<S>& xv = tp.value(xi);
    const MatX<S>& wvv = tp.value(wi);
    const int ho = m.h_out(), wo = m.w_out();
    MatX<S> dW = MatX<S>::Zero(wvv.rows(), wvv.cols());
    MatX<S> db = MatX<S>::Zero(m.c_out, 1);
    MatX<S> dX;
    bool need_x = tp.needs_grad(xi);
    if (need_x) dX = MatX<S>::Zero(xv.rows(), B);
    MatX<S> cols;
    for (int j = 0; j < B; ++j) {
      Eigen::Map<const MatX<S>> gy(g.col(j).data(), m.c_out, ho * wo);
      if (tp.needs_grad(wi) || tp.needs_grad(bi)) {
        im2col(m, xv.col(j).data(), cols);
        dW.noalias() += gy * cols.transpose();
        db += gy.rowwise().sum();
      }
      if (need_x) {
        MatX<S> dcols = wvv.transpose() * gy;
        col2im_add(m, dcols, dX.col(j).data());
      }
    }
    if (tp.needs_grad(wi)) tp.accum(wi, dW);
    if (tp.needs_grad(bi)) tp.accum(bi, db);
    if (need_x) tp.accum(xi, dX);
  });
}

// nearest-neighbour 2x upsampling on (c*h*w x B)
template <class S>
ad::Var<S> upsample2x(Ctx<S>& ctx, ad::Var<S> x, int c, int h, int w) {
  ad::Tape<S>& t = ctx.tape();
  const MatX<S>& xm = x.val();
  const int B = int(xm.cols());
  MatX<S> out(c * 2 * h * 2 * w, B);
  for (int j = 0; j < B; ++j) {
    const S* in = xm.col(j).data();
    S* o = out.col(j).data();
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          o[ch * 4 * h * w + y * 2 * w + xx] = in[ch * h * w + (y / 2) * w + (xx / 2)];
  }
  int xi = x.idx, oi = int(t.size());
  return t.make(std::move(out), t.needs_grad(xi), [xi, oi, c, h, w, B](ad::Tape<S>& tp) {
    const MatX<S>& g = tp.grad({&tp, oi});
    MatX<S> dX = MatX<S>::Zero(c * h * w, B);
    for (int j = 0; j < B; ++j) {
      const S* gp = g.col(j).data();
      S* d = dX.col(j).data();
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < 2 * h; ++y)
          for (int xx = 0; xx < 2 * w; ++xx)
            d[ch * h * w + (y / 2) * w + (xx / 2)] += gp[ch * 4 * h * w + y * 2 * w + xx];
    }
    tp.accum(xi, dX);
  });
}

// ---- optimizer ----

template <class S>
struct Adam {
  S lr = S(5e-4);
  S beta1 = S(0.9), beta2 = S(0.999);
  S eps = S(1e-8);
  S weight_decay = S(0);
  long steps = 0;

  void step(ParamStore<S>& ps) {
    ++steps;
    const S bc1 = S(1) - S(std::pow(double(beta1), double(steps)));
    const S bc2 = S(1) - S(std::pow(double(beta2), double(steps)));
    for (auto& e : ps.entries()) {
      MatX<S> g = e.grad;
      if (weight_decay != S(0)) g += weight_decay * e.value;
      e.m = beta1 * e.m + (S(1) - beta1) * g;
      e.v = beta2 * e.v + (S(1) - beta2) * g.cwiseProduct(g);
      MatX<S> mhat = e.m / bc1;
      MatX<S> vhat = e.v / bc2;
      e.value.array() -= lr * mhat.array() / (vhat.array().sqrt() + eps);
    }
  }
};

}  // namespace carl::nn
