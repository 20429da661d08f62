#pragma once

#include "carl/common.hpp"

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

// Reverse-mode autodiff over Eigen matrices. A Tape owns a growing list of
// nodes; ops append nodes with a backward closure. Activations are matrices
// shaped (features x batch); per-sample quantities are rows (1 x batch).
namespace carl::ad {

template <class S>
class Tape;

template <class S>
struct Var {
  Tape<S>* tape = nullptr;
  int idx = -1;

  const MatX<S>& val() const { return tape->value(idx); }
  Eigen::Index rows() const { return val().rows(); }
  Eigen::Index cols() const { return val().cols(); }
  S scalar() const { return val()(0, 0); }
};

template <class S>
class Tape {
 public:
  struct Node {
    MatX<S> value;
    MatX<S> grad;
    bool grad_alloc = false;
    bool needs_grad = false;
    std::function<void(Tape&)> backward;
  };

  Var<S> leaf(const MatX<S>& v, bool needs_grad = true) {
    nodes_.push_back(Node{v, {}, false, needs_grad, nullptr});
    return {this, int(nodes_.size()) - 1};
  }
  Var<S> constant(const MatX<S>& v) { return leaf(v, false); }
  Var<S> constant_scalar(S v) {
    MatX<S> m(1, 1);
    m(0, 0) = v;
    return leaf(m, false);
  }

  Var<S> make(MatX<S>&& v, bool needs_grad, std::function<void(Tape&)> bw) {
    nodes_.push_back(Node{std::move(v), {}, false, needs_grad, needs_grad ? std::move(bw) : nullptr});
    return {this, int(nodes_.size()) - 1};
  }

  const MatX<S>& value(int i) const { return nodes_[i].value; }
  bool needs_grad(int i) const { return nodes_[i].needs_grad; }

  // Accumulates g into node i's gradient.
  template <class Expr>
  void accum(int i, const Expr& g) {
    Node& n = nodes_[i];
    if (!n.needs_grad) return;
    if (!n.grad_alloc) {
      n.grad = MatX<S>::Zero(n.value.rows(), n.value.cols());
      n.grad_alloc = true;
    }
    n.grad += g;
  }

  const MatX<S>& grad(const Var<S>& v) {
    Node& n = nodes_[v.idx];
    if (!n.grad_alloc) {
      n.grad = MatX<S>::Zero(n.value.rows(), n.value.cols());
      n.grad_alloc = true;
    }
    return n.grad;
  }

  // Runs the reverse sweep from a scalar root.
  void backward(const Var<S>& root) {
    Node& r = nodes_[root.idx];
    if (r.value.rows() != 1 || r.value.cols() != 1)
      throw InputError("backward root must be a 1x1 scalar");
    accum(root.idx, MatX<S>::Ones(1, 1));
    for (int i = root.idx; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward && n.grad_alloc) n.backward(*this);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

// ---- primitive ops ----

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val() * b.val();
  bool ng = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  int ai = a.idx, bi = b.idx;
  int oi = int(t.size());
  return t.make(std::move(out), ng, [ai, bi, oi](Tape<S>& tp) {
    const MatX<S>& g = tp.grad({&tp, oi});
    if (tp.needs_grad(ai)) tp.accum(ai, g * tp.value(bi).transpose());
    if (tp.needs_grad(bi)) tp.accum(bi, tp.value(ai).transpose() * g);
  });
}

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val() + b.val();
  bool ng = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  int ai = a.idx, bi = b.idx, oi = int(t.size());
  return t.make(std::move(out), ng, [ai, bi, oi](Tape<S>& tp) {
    const MatX<S>& g = tp.grad({&tp, oi});
    tp.accum(ai, g);
    tp.accum(bi, g);
  });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val() - b.val();
  bool ng = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  int ai = a.idx, bi = b.idx, oi = int(t.size());
  return t.make(std::move(out), ng, [ai, bi, oi](Tape<S>& tp) {
    const MatX<S>& g = tp.grad({&tp, oi});
    tp.accum(ai, g);
    tp.accum(bi, -g);
  });
}

// bias is (n x 1), broadcast over batch columns
template <class S>
Var<S> add_bias(Var<S> a, Var<S> bias) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val().colwise() + VecX<S>(bias.val().col(0));
  bool ng = t.needs_grad(a.idx) || t.needs_grad(bias.idx);
  int ai = a.idx, bi = bias.idx, oi = int(t.size());
  return t.make(std::move(out), ng, [ai, bi, oi](Tape<S>& tp) {
    const MatX<S>& g = tp.grad({&tp, oi});
    tp.accum(ai, g);
    if (tp.needs_grad(bi)) tp.accum(bi, g.rowwise().sum());
  });
}

template <class S>
Var<S> cmul(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val().cwiseProduct(b.val());
  bool ng = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  int ai = a.idx, bi = b.idx, oi = int(t.size());
  return t.make(std::move(out), ng, [ai, bi, oi](Tape<S>& tp) {
    const MatX<S>& g = tp.grad({&tp, oi});
    if (tp.needs_grad(ai)) tp.accum(ai, g.cwiseProduct(tp.value(bi)));
    if (tp.needs_grad(bi)) tp.accum(bi, g.cwiseProduct(tp.value(ai)));
  });
}

template <class S>
Var<S> cdiv(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val().cwiseQuotient(b.val());
  bool ng = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  int ai = a.idx, bi = b.idx, oi = int(t.size());
  return t.make(std::move(out), ng, [ai, bi, oi](Tape<S>& tp) {
    const MatX<S>& g = tp.grad({&tp, oi});
    if (tp.needs_grad(ai)) tp.accum(ai, g.cwiseQuotient(tp.value(bi)));
    if (tp.needs_grad(bi))
      tp.accum(bi, -(g.cwiseProduct(tp.value(oi)).cwiseQuotient(tp.value(bi))));
  });
}

template <class S>
Var<S> scale(Var<S> a, S k) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val() * k;
  int ai = a.idx, oi = int(t.size());
  return t.make(std::move(out), t.needs_grad(ai), [ai, oi, k](Tape<S>& tp) {
    tp.accum(ai, tp.grad({&tp, oi}) * k);
  });
}

template <class S>
Var<S> add_scalar(Var<S> a, S k) {
  Tape<S>& t = *a.tape;
  MatX<S> out = (a.val().array() + k).matrix();
  int ai = a.idx, oi = int(t.size());
  return t.make(std::move(out), t.needs_grad(ai), [ai, oi](Tape<S>& tp) {
    tp.accum(ai, tp.grad({&tp, oi}));
  });
}

template <class S>
Var<S> neg(Var<S> a) {
  return scale(a, S(-1));
}

template <class S>
Var<S> relu(Var<S> a) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val().cwiseMax(S(0));
  int ai = a.idx, oi = int(t.size());
  return t.make(std::move(out), t.needs_grad(ai), [ai, oi](Tape<S>& tp) {
    MatX<S> mask = (tp.value(ai).array() > S(0)).template cast<S>();
    tp.accum(ai, tp.grad({&tp, oi}).cwiseProduct(mask));
  });
}

template <class S>
Var<S> tanh_(Var<S> a) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val().array().tanh().matrix();
  int ai = a.idx, oi = int(t.size());
  return t.make(std::move(out), t.needs_grad(ai), [ai, oi](Tape<S>& tp) {
    const MatX<S>& y = tp.value(oi);
    tp.accum(ai, tp.grad({&tp, oi}).cwiseProduct((S(1) - y.array().square()).matrix()));
  });
}

template <class S>
Var<S> sigmoid(Var<S> a) {
  Tape<S>& t = *a.tape;
  MatX<S> out = (S(1) / (S(1) + (-a.val().array()).exp())).matrix();
  int ai = a.idx, oi = int(t.size());
  return t.make(std::move(out), t.needs_grad(ai), [ai, oi](Tape<S>& tp) {
    const MatX<S>& y = tp.value(oi);
    tp.accum(ai, tp.grad({&tp, oi}).cwiseProduct((y.array() * (S(1) - y.array())).matrix()));
  });
}

template <class S>
Var<S> softplus(Var<S> a) {
  Tape<S>& t = *a.tape;
  // stable: max(x,0) + log1p(exp(-|x|))
  MatX<S> out =
      (a.val().array().max(S(0)) + (-(a.val().array().abs())).exp().log1p()).matrix();
  int ai = a.idx, oi = int(t.size());
  return t.make(std::move(out), t.needs_grad(ai), [ai, oi](Tape<S>& tp) {
    MatX<S> s = (S(1) / (S(1) + (-tp.value(ai).array()).exp())).matrix();
    tp.accum(ai, tp.grad({&tp, oi}).cwiseProduct(s));
  });
}

template <class S>
Var<S> exp_(Var<S> a) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val().array().exp().matrix();
  int ai = a.idx, oi = int(t.size());
  return t.make(std::move(out), t.needs_grad(ai), [ai, oi](Tape<S>& tp) {
    tp.accum(ai, tp.grad({&tp, oi}).cwiseProduct(tp.value(oi)));
  });
}

template <class S>
Var<S> log_(Var<S> a) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val().array().log().matrix();
  int ai = a.idx, oi = int(t.size());
  return t.make(std::move(out), t.needs_grad(ai), [ai, oi](Tape<S>& tp) {
    tp.accum(ai, tp.grad({&tp, oi}).cwiseQuotient(tp.value(ai)));
  });
}

template <class S>
Var<S> square(Var<S> a) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val().array().square().matrix();
  int ai = a.idx, oi = int(t.size());
  return t.make(std::move(out), t.needs_grad(ai), [ai, oi](Tape<S>& tp) {
    tp.accum(ai, (tp.grad({&tp, oi}).array() * S(2) * tp.value(ai).array()).matrix());
  });
}

// sqrt with zero subgradient at 0
template <class S>
Var<S> sqrt_(Var<S> a) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val().array().max(S(0)).sqrt().matrix();
  int ai = a.idx, oi = int(t.size());
  return t.make(std::move(out), t.needs_grad(ai), [ai, oi](Tape<S>& tp) {
    const MatX<S>& y = tp.value(oi);
    MatX<S> d = (y.array() > S(0)).select((S(0.5) / y.array()).matrix(), MatX<S>::Zero(y.rows(), y.cols()));
    tp.accum(ai, tp.grad({&tp, oi}).cwiseProduct(d));
  });
}

// elementwise max(a, k); gradient flows where a > k
template <class S>
Var<S> max_floor(Var<S> a, S k) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val().cwiseMax(k);
  int ai = a.idx, oi = int(t.size());
  return t.make(std::move(out), t.needs_grad(ai), [ai, oi, k](Tape<S>& tp) {
    MatX<S> mask = (tp.value(ai).array() > k).template cast<S>();
    tp.accum(ai, tp.grad({&tp, oi}).cwiseProduct(mask));
  });
}

// elementwise min; ties route the gradient to a
template <class S>
Var<S> min_(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val().cwiseMin(b.val());
  bool ng = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  int ai = a.idx, bi = b.idx, oi = int(t.size());
  return t.make(std::move(out), ng, [ai, bi, oi](Tape<S>& tp) {
    const MatX<S>& g = tp.grad({&tp, oi});
    MatX<S> mask = (tp.value(ai).array() <= tp.value(bi).array()).template cast<S>();
    if (tp.needs_grad(ai)) tp.accum(ai, g.cwiseProduct(mask));
    if (tp.needs_grad(bi))
      tp.accum(bi, g.cwiseProduct((MatX<S>::Ones(mask.rows(), mask.cols()) - mask)));
  });
}

template <class S>
Var<S> concat_rows(Var<S> a, Var<S> b) {
  Tape<S>& t = *a.tape;
  MatX<S> out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.val();
  out.bottomRows(b.rows()) = b.val();
  bool ng = t.needs_grad(a.idx) || t.needs_grad(b.idx);
  int ai = a.idx, bi = b.idx, oi = int(t.size());
  Eigen::Index ra = a.rows(), rb = b.rows();
  return t.make(std::move(out), ng, [ai, bi, oi, ra, rb](Tape<S>& tp) {
    const MatX<S>& g = tp.grad({&tp, oi});
    tp.accum(ai, g.topRows(ra));
    tp.accum(bi, g.bottomRows(rb));
  });
}

template <class S>
Var<S> slice_rows(Var<S> a, int r0, int n) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val().middleRows(r0, n);
  int ai = a.idx, oi = int(t.size());
  Eigen::Index rows = a.rows(), cols = a.cols();
  return t.make(std::move(out), t.needs_grad(ai), [ai, oi, r0, n, rows, cols](Tape<S>& tp) {
    MatX<S> g = MatX<S>::Zero(rows, cols);
    g.middleRows(r0, n) = tp.grad({&tp, oi});
    tp.accum(ai, g);
  });
}

// per-sample reduction: (n x B) -> (1 x B)
template <class S>
Var<S> sum_cols(Var<S> a) {
  Tape<S>& t = *a.tape;
  MatX<S> out = a.val().colwise().sum();
  int ai = a.idx, oi = int(t.size());
  Eigen::Index rows = a.rows();
  return t.make(std::move(out), t.needs_grad(ai), [ai, oi, rows](Tape<S>& tp) {
    tp.accum(ai, MatX<S>::Ones(rows, 1) * tp.grad({&tp, oi}));
  });
}

template <class S>
Var<S> sum_all(Var<S> a) {
  Tape<S>& t = *a.tape;
  MatX<S> out(1, 1);
  out(0, 0) = a.val().sum();
  int ai = a.idx, oi = int(t.size());
  Eigen::Index rows = a.rows(), cols = a.cols();
  return t.make(std::move(out), t.needs_grad(ai), [ai, oi, rows, cols](Tape<S>& tp) {
    tp.accum(ai, MatX<S>::Constant(rows, cols, tp.grad({&tp, oi})(0, 0)));
  });
}

template <class S>
Var<S> mean_all(Var<S> a) {
  return scale(sum_all(a), S(1) / S(a.val().size()));
}

// multiply each column j of a by w(0, j)
template <class S>
Var<S> row_bcast_mul(Var<S> a, Var<S> w) {
  Tape<S>& t = *a.tape;
  MatX<S> out = (a.val().array().rowwise() * w.val().row(0).array()).matrix();
  bool ng = t.needs_grad(a.idx) || t.needs_grad(w.idx);
  int ai = a.idx, wi = w.idx, oi = int(t.size());
  return t.make(std::move(out), ng, [ai, wi, oi](Tape<S>& tp) {
    const MatX<S>& g = tp.grad({&tp, oi});
    if (tp.needs_grad(ai))
      tp.accum(ai, (g.array().rowwise() * tp.value(wi).row(0).array()).matrix());
    if (tp.needs_grad(wi))
      tp.accum(wi, g.cwiseProduct(tp.value(ai)).colwise().sum());
  });
}

// Bernoulli NLL from logits against a constant target in [0,1].
// Returns per-sample row (1 x B): sum_i max(l,0) - l*t + log1p(exp(-|l|)).
template <class S>
Var<S> bce_logits(Var<S> logits, const MatX<S>& target) {
  Tape<S>& t = *logits.tape;
  const MatX<S>& l = logits.val();
  MatX<S> per = (l.array().max(S(0)) - l.array() * target.array() +
                 (-(l.array().abs())).exp().log1p())
                    .matrix();
  MatX<S> out = per.colwise().sum();
  int li = logits.idx, oi = int(t.size());
  MatX<S> tgt = target;
  return t.make(std::move(out), t.needs_grad(li), [li, oi, tgt](Tape<S>& tp) {
    const MatX<S>& l2 = tp.value(li);
    MatX<S> sig = (S(1) / (S(1) + (-l2.array()).exp())).matrix();
    const MatX<S>& g = tp.grad({&tp, oi});
    tp.accum(li, ((sig - tgt).array().rowwise() * g.row(0).array()).matrix());
  });
}

// ---- composites ----

// log N(x; mean, var) summed over dims -> (1 x B)
template <class S>
Var<S> gaussian_logpdf(Var<S> x, Var<S> mean, Var<S> var) {
  Tape<S>& t = *x.tape;
  Var<S> d = sub(x, mean);
  Var<S> quad = cdiv(square(d), var);
  Var<S> logv = log_(var);
  Var<S> per = scale(add(add_scalar(logv, S(std::log(2.0 * M_PI))), quad), S(-0.5));
  (void)t;
  return sum_cols(per);
}

// KL(N(pm, pv) || N(qm, qv)) summed over dims -> (1 x B)
template <class S>
Var<S> kl_diag(Var<S> pm, Var<S> pv, Var<S> qm, Var<S> qv) {
  Var<S> ratio = log_(cdiv(qv, pv));
  Var<S> quad = cdiv(add(pv, square(sub(pm, qm))), qv);
  Var<S> inner = add_scalar(add(ratio, quad), S(-1));
  return scale(sum_cols(inner), S(0.5));
}

// z = mean + sqrt(var) .* eps, eps constant
template <class S>
Var<S> reparam(Var<S> mean, Var<S> var, Var<S> eps) {
  return add(mean, cmul(sqrt_(var), eps));
}

}  // namespace carl::ad
