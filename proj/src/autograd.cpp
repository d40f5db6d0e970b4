#include "lgmoe/autograd.hpp"

#include <cmath>
#include <cstring>

#include "lgmoe/kernels.hpp"

namespace lgmoe {

namespace {

const kern::Backend& K() { return kern::active(); }

void check_same_tape(Var a, Var b, const char* op) {
  LGMOE_CHECK(a.valid() && b.valid(), op << ": invalid var");
  LGMOE_CHECK(a.tape == b.tape, op << ": vars live on different tapes");
}

// rank-1 tensors are treated as a single row
std::pair<int, int> as_rows(const Tensor& t, const char* op) {
  if (t.rank() == 1) return {1, t.dim(0)};
  LGMOE_CHECK(t.rank() == 2, op << ": expected 1-D or 2-D tensor, got " << t.shape_str());
  return {t.dim(0), t.dim(1)};
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) {
    double z = std::exp(-x);
    return 1.0 / (1.0 + z);
  }
  double z = std::exp(x);
  return z / (1.0 + z);
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  LGMOE_CHECK(value.all_finite(), "leaf: non-finite values in " << value.shape_str());
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad});
  return Var{static_cast<int>(nodes_.size()) - 1, this};
}

const Tensor& Tape::value(Var v) const {
  LGMOE_CHECK(v.tape == this, "value: var from another tape");
  return nodes_.at(static_cast<size_t>(v.id)).value;
}

bool Tape::requires_grad(Var v) const {
  LGMOE_CHECK(v.tape == this, "requires_grad: var from another tape");
  return nodes_.at(static_cast<size_t>(v.id)).requires_grad;
}

Tensor Tape::grad(Var v) const {
  LGMOE_CHECK(v.tape == this, "grad: var from another tape");
  const Node& n = nodes_.at(static_cast<size_t>(v.id));
  if (n.grad.empty() && n.value.numel() > 0) return Tensor::zeros(n.value.shape());
  return n.grad;
}

Tensor& Tape::grad_buf(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor::zeros(n.value.shape());
  return n.grad;
}

int Tape::emit(const char* op_name, Tensor value, bool requires_grad,
               std::function<void(Tape&, int)> backward_rule) {
  LGMOE_CHECK(value.all_finite(),
              op_name << ": produced non-finite values, shape " << value.shape_str());
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad});
  int id = static_cast<int>(nodes_.size()) - 1;
  if (requires_grad && backward_rule) ops_.push_back(OpRecord{id, std::move(backward_rule)});
  return id;
}

void Tape::backward(Var loss) {
  LGMOE_CHECK(loss.tape == this, "backward: loss from another tape");
  const Node& ln = nodes_.at(static_cast<size_t>(loss.id));
  LGMOE_CHECK(ln.value.numel() == 1,
              "backward: loss must be scalar, got " << ln.value.shape_str());
  grad_buf(loss.id).at(0) = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (!nodes_[static_cast<size_t>(it->out)].grad.empty()) it->bwd(*this, it->out);
  }
}

// ---------------------------------------------------------------------------
// ops

Var add(Var a, Var b) {
  check_same_tape(a, b, "add");
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  LGMOE_CHECK(av.same_shape(bv),
              "add: shape mismatch " << av.shape_str() << " vs " << bv.shape_str());
  Tensor out(av.shape());
  K().add(av.data(), bv.data(), out.data(), static_cast<size_t>(av.numel()));
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  int ia = a.id, ib = b.id;
  int id = t.emit("add", std::move(out), rg, [ia, ib](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    size_t n = static_cast<size_t>(g.numel());
    if (tp.requires_grad(Var{ia, &tp})) K().axpy(1.0, g.data(), tp.grad_buf(ia).data(), n);
    if (tp.requires_grad(Var{ib, &tp})) K().axpy(1.0, g.data(), tp.grad_buf(ib).data(), n);
  });
  return Var{id, &t};
}

Var sub(Var a, Var b) {
  check_same_tape(a, b, "sub");
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  LGMOE_CHECK(av.same_shape(bv),
              "sub: shape mismatch " << av.shape_str() << " vs " << bv.shape_str());
  Tensor out(av.shape());
  K().sub(av.data(), bv.data(), out.data(), static_cast<size_t>(av.numel()));
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  int ia = a.id, ib = b.id;
  int id = t.emit("sub", std::move(out), rg, [ia, ib](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    size_t n = static_cast<size_t>(g.numel());
    if (tp.requires_grad(Var{ia, &tp})) K().axpy(1.0, g.data(), tp.grad_buf(ia).data(), n);
    if (tp.requires_grad(Var{ib, &tp})) K().axpy(-1.0, g.data(), tp.grad_buf(ib).data(), n);
  });
  return Var{id, &t};
}

Var mul(Var a, Var b) {
  check_same_tape(a, b, "mul");
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  LGMOE_CHECK(av.same_shape(bv),
              "mul: shape mismatch " << av.shape_str() << " vs " << bv.shape_str());
  Tensor out(av.shape());
  K().mul(av.data(), bv.data(), out.data(), static_cast<size_t>(av.numel()));
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  int ia = a.id, ib = b.id;
  int id = t.emit("mul", std::move(out), rg, [ia, ib](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    size_t n = static_cast<size_t>(g.numel());
    Tensor tmp(tp.value_at(o).shape());
    if (tp.requires_grad(Var{ia, &tp})) {
      K().mul(g.data(), tp.value_at(ib).data(), tmp.data(), n);
      K().axpy(1.0, tmp.data(), tp.grad_buf(ia).data(), n);
    }
    if (tp.requires_grad(Var{ib, &tp})) {
      K().mul(g.data(), tp.value_at(ia).data(), tmp.data(), n);
      K().axpy(1.0, tmp.data(), tp.grad_buf(ib).data(), n);
    }
  });
  return Var{id, &t};
}

Var scale(Var a, double c) {
  LGMOE_CHECK(a.valid(), "scale: invalid var");
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  Tensor out(av.shape());
  K().scale(av.data(), c, out.data(), static_cast<size_t>(av.numel()));
  int ia = a.id;
  int id = t.emit("scale", std::move(out), t.requires_grad(a), [ia, c](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    K().axpy(c, g.data(), tp.grad_buf(ia).data(), static_cast<size_t>(g.numel()));
  });
  return Var{id, &t};
}

Var add_bias(Var x, Var b) {
  check_same_tape(x, b, "add_bias");
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  const Tensor& bv = t.value(b);
  auto [m, n] = as_rows(xv, "add_bias");
  LGMOE_CHECK(bv.rank() == 1 && bv.dim(0) == n,
              "add_bias: bias " << bv.shape_str() << " does not match " << xv.shape_str());
  Tensor out(xv.shape());
  K().add_bias(xv.data(), bv.data(), out.data(), m, n);
  bool rg = t.requires_grad(x) || t.requires_grad(b);
  int ix = x.id, ib = b.id;
  int mm = m, nn = n;
  int id = t.emit("add_bias", std::move(out), rg, [ix, ib, mm, nn](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    if (tp.requires_grad(Var{ix, &tp}))
      K().axpy(1.0, g.data(), tp.grad_buf(ix).data(), static_cast<size_t>(g.numel()));
    if (tp.requires_grad(Var{ib, &tp})) {
      double* db = tp.grad_buf(ib).data();
      for (int i = 0; i < mm; ++i)
        K().axpy(1.0, g.data() + static_cast<size_t>(i) * nn, db, static_cast<size_t>(nn));
    }
  });
  return Var{id, &t};
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b, "matmul");
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  LGMOE_CHECK(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(0),
              "matmul: shape mismatch " << av.shape_str() << " vs " << bv.shape_str());
  int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor out({m, n});
  K().gemm_nn(av.data(), bv.data(), out.data(), m, k, n, false);
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  int ia = a.id, ib = b.id;
  int id = t.emit("matmul", std::move(out), rg, [ia, ib, m, k, n](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    if (tp.requires_grad(Var{ia, &tp}))
      K().gemm_nt(g.data(), tp.value_at(ib).data(), tp.grad_buf(ia).data(), m, n, k, true);
    if (tp.requires_grad(Var{ib, &tp}))
      K().gemm_tn(tp.value_at(ia).data(), g.data(), tp.grad_buf(ib).data(), m, k, n, true);
  });
  return Var{id, &t};
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b, "matmul_nt");
  Tape& t = *a.tape;
  const Tensor& av = t.value(a);
  const Tensor& bv = t.value(b);
  LGMOE_CHECK(av.rank() == 2 && bv.rank() == 2 && av.dim(1) == bv.dim(1),
              "matmul_nt: shape mismatch " << av.shape_str() << " vs " << bv.shape_str());
  int m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  Tensor out({m, n});
  K().gemm_nt(av.data(), bv.data(), out.data(), m, k, n, false);
  bool rg = t.requires_grad(a) || t.requires_grad(b);
  int ia = a.id, ib = b.id;
  int id = t.emit("matmul_nt", std::move(out), rg, [ia, ib, m, k, n](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    if (tp.requires_grad(Var{ia, &tp}))
      K().gemm_nn(g.data(), tp.value_at(ib).data(), tp.grad_buf(ia).data(), m, n, k, true);
    if (tp.requires_grad(Var{ib, &tp}))
      K().gemm_tn(g.data(), tp.value_at(ia).data(), tp.grad_buf(ib).data(), m, n, k, true);
  });
  return Var{id, &t};
}

Var transpose(Var x) {
  LGMOE_CHECK(x.valid(), "transpose: invalid var");
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  LGMOE_CHECK(xv.rank() == 2, "transpose: expected 2-D tensor, got " << xv.shape_str());
  int m = xv.dim(0), n = xv.dim(1);
  Tensor out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at(j, i) = xv.at(i, j);
  int ix = x.id;
  int id = t.emit("transpose", std::move(out), t.requires_grad(x), [ix, m, n](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    Tensor& dx = tp.grad_buf(ix);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) dx.at(i, j) += g.at(j, i);
  });
  return Var{id, &t};
}

Var relu(Var x) {
  LGMOE_CHECK(x.valid(), "relu: invalid var");
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  K().relu(xv.data(), out.data(), static_cast<size_t>(xv.numel()));
  int ix = x.id;
  int id = t.emit("relu", std::move(out), t.requires_grad(x), [ix](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    K().relu_bwd(tp.value_at(ix).data(), g.data(), tp.grad_buf(ix).data(),
                 static_cast<size_t>(g.numel()));
  });
  return Var{id, &t};
}

Var swish(Var x) {
  LGMOE_CHECK(x.valid(), "swish: invalid var");
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  Tensor out(xv.shape());
  const double* xp = xv.data();
  double* op = out.data();
  for (int64_t i = 0; i < xv.numel(); ++i) op[i] = xp[i] * sigmoid(xp[i]);
  int ix = x.id;
  int id = t.emit("swish", std::move(out), t.requires_grad(x), [ix](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    const Tensor& xin = tp.value_at(ix);
    Tensor& dx = tp.grad_buf(ix);
    for (int64_t i = 0; i < xin.numel(); ++i) {
      double s = sigmoid(xin.at(static_cast<int>(i)));
      double xi = xin.at(static_cast<int>(i));
      dx.at(static_cast<int>(i)) += g.at(static_cast<int>(i)) * (s + xi * s * (1.0 - s));
    }
  });
  return Var{id, &t};
}

Var activation(Var x, Act act) { return act == Act::kRelu ? relu(x) : swish(x); }

namespace {

// softmax over the last axis of a 1-D/2-D tensor
Var softmax_rows(Var x, bool log_form) {
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  auto [m, n] = as_rows(xv, "softmax");
  LGMOE_CHECK(n >= 1, "softmax: empty axis in " << xv.shape_str());
  Tensor out(xv.shape());
  for (int i = 0; i < m; ++i) {
    const double* row = xv.data() + static_cast<size_t>(i) * n;
    double* orow = out.data() + static_cast<size_t>(i) * n;
    double mx = K().reduce_max(row, static_cast<size_t>(n));
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      double e = std::exp(row[j] - mx);
      orow[j] = e;
      s += e;
    }
    if (log_form) {
      double ls = mx + std::log(s);
      for (int j = 0; j < n; ++j) orow[j] = row[j] - ls;
    } else {
      K().scale(orow, 1.0 / s, orow, static_cast<size_t>(n));
    }
  }
  int ix = x.id;
  const char* name = log_form ? "log_softmax" : "softmax";
  int mm = m, nn = n;
  int id = t.emit(name, std::move(out), t.requires_grad(x),
                  [ix, mm, nn, log_form](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    const Tensor& y = tp.value_at(o);
    Tensor& dx = tp.grad_buf(ix);
    for (int i = 0; i < mm; ++i) {
      const double* gr = g.data() + static_cast<size_t>(i) * nn;
      const double* yr = y.data() + static_cast<size_t>(i) * nn;
      double* dr = dx.data() + static_cast<size_t>(i) * nn;
      double s = K().reduce_sum(gr, static_cast<size_t>(nn));
      if (log_form) {
        // dx = g - exp(y) * sum(g)
        for (int j = 0; j < nn; ++j) dr[j] += gr[j] - std::exp(yr[j]) * s;
      } else {
        double dp = K().dot(gr, yr, static_cast<size_t>(nn));
        for (int j = 0; j < nn; ++j) dr[j] += yr[j] * (gr[j] - dp);
      }
    }
  });
  return Var{id, &t};
}

int last_axis(const Tensor& t) { return t.rank() - 1; }

}  // namespace

Var softmax(Var x, int axis) {
  LGMOE_CHECK(x.valid(), "softmax: invalid var");
  const Tensor& xv = x.tape->value(x);
  LGMOE_CHECK(axis >= 0 && axis < xv.rank(),
              "softmax: axis " << axis << " out of range for " << xv.shape_str());
  if (axis == last_axis(xv)) return softmax_rows(x, false);
  LGMOE_CHECK(xv.rank() == 2, "softmax: axis 0 only supported for 2-D tensors");
  return transpose(softmax_rows(transpose(x), false));
}

Var log_softmax(Var x, int axis) {
  LGMOE_CHECK(x.valid(), "log_softmax: invalid var");
  const Tensor& xv = x.tape->value(x);
  LGMOE_CHECK(axis >= 0 && axis < xv.rank(),
              "log_softmax: axis " << axis << " out of range for " << xv.shape_str());
  if (axis == last_axis(xv)) return softmax_rows(x, true);
  LGMOE_CHECK(xv.rank() == 2, "log_softmax: axis 0 only supported for 2-D tensors");
  return transpose(softmax_rows(transpose(x), true));
}

Var masked_softmax_rows(Var x, const BoolMatrix& mask) {
  LGMOE_CHECK(x.valid(), "masked_softmax: invalid var");
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  auto [m, n] = as_rows(xv, "masked_softmax");
  LGMOE_CHECK(mask.rows == m && mask.cols == n,
              "masked_softmax: mask " << mask.rows << "x" << mask.cols << " does not match "
                                      << xv.shape_str());
  Tensor out(xv.shape());
  for (int i = 0; i < m; ++i) {
    const double* row = xv.data() + static_cast<size_t>(i) * n;
    double* orow = out.data() + static_cast<size_t>(i) * n;
    double mx = -HUGE_VAL;
    for (int j = 0; j < n; ++j)
      if (mask.at(i, j) && row[j] > mx) mx = row[j];
    LGMOE_CHECK(mx > -HUGE_VAL, "masked_softmax: row " << i << " has no visible entries");
    double s = 0.0;
    for (int j = 0; j < n; ++j) {
      if (mask.at(i, j)) {
        double e = std::exp(row[j] - mx);
        orow[j] = e;
        s += e;
      } else {
        orow[j] = 0.0;
      }
    }
    double inv = 1.0 / s;
    for (int j = 0; j < n; ++j) orow[j] *= inv;
  }
  int ix = x.id;
  BoolMatrix mk = mask;
  int mm = m, nn = n;
  int id = t.emit("masked_softmax", std::move(out), t.requires_grad(x),
                  [ix, mm, nn, mk = std::move(mk)](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    const Tensor& y = tp.value_at(o);
    Tensor& dx = tp.grad_buf(ix);
    for (int i = 0; i < mm; ++i) {
      const double* gr = g.data() + static_cast<size_t>(i) * nn;
      const double* yr = y.data() + static_cast<size_t>(i) * nn;
      double* dr = dx.data() + static_cast<size_t>(i) * nn;
      double dp = 0.0;
      for (int j = 0; j < nn; ++j)
        if (mk.at(i, j)) dp += gr[j] * yr[j];
      for (int j = 0; j < nn; ++j)
        if (mk.at(i, j)) dr[j] += yr[j] * (gr[j] - dp);
    }
  });
  return Var{id, &t};
}

Var layer_norm(Var x, Var gamma, Var beta) {
  check_same_tape(x, gamma, "layer_norm");
  check_same_tape(gamma, beta, "layer_norm");
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  const Tensor& gv = t.value(gamma);
  const Tensor& bv = t.value(beta);
  auto [m, n] = as_rows(xv, "layer_norm");
  LGMOE_CHECK(gv.rank() == 1 && gv.dim(0) == n && bv.rank() == 1 && bv.dim(0) == n,
              "layer_norm: affine params " << gv.shape_str() << "/" << bv.shape_str()
                                           << " do not match " << xv.shape_str());
  constexpr double kEps = 1e-5;
  Tensor out(xv.shape());
  // saved per row for backward: mean, inv_std
  std::vector<double> means(static_cast<size_t>(m)), invs(static_cast<size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double* row = xv.data() + static_cast<size_t>(i) * n;
    double mean = K().reduce_sum(row, static_cast<size_t>(n)) / n;
    double var = K().centered_sumsq(row, mean, static_cast<size_t>(n)) / n;
    double inv = 1.0 / std::sqrt(var + kEps);
    means[static_cast<size_t>(i)] = mean;
    invs[static_cast<size_t>(i)] = inv;
    K().norm_affine(row, mean, inv, gv.data(), bv.data(),
                    out.data() + static_cast<size_t>(i) * n, static_cast<size_t>(n));
  }
  bool rg = t.requires_grad(x) || t.requires_grad(gamma) || t.requires_grad(beta);
  int ix = x.id, ig = gamma.id, ib = beta.id;
  int mm = m, nn = n;
  int id = t.emit("layer_norm", std::move(out), rg,
                  [ix, ig, ib, mm, nn, means = std::move(means),
                   invs = std::move(invs)](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    const Tensor& xin = tp.value_at(ix);
    const Tensor& gam = tp.value_at(ig);
    bool need_x = tp.requires_grad(Var{ix, &tp});
    bool need_g = tp.requires_grad(Var{ig, &tp});
    bool need_b = tp.requires_grad(Var{ib, &tp});
    std::vector<double> xhat(static_cast<size_t>(nn)), dxhat(static_cast<size_t>(nn));
    for (int i = 0; i < mm; ++i) {
      const double* xr = xin.data() + static_cast<size_t>(i) * nn;
      const double* gr = g.data() + static_cast<size_t>(i) * nn;
      double mean = means[static_cast<size_t>(i)];
      double inv = invs[static_cast<size_t>(i)];
      for (int j = 0; j < nn; ++j) xhat[static_cast<size_t>(j)] = (xr[j] - mean) * inv;
      if (need_b) {
        K().axpy(1.0, gr, tp.grad_buf(ib).data(), static_cast<size_t>(nn));
      }
      if (need_g) {
        double* dg = tp.grad_buf(ig).data();
        for (int j = 0; j < nn; ++j) dg[j] += gr[j] * xhat[static_cast<size_t>(j)];
      }
      if (need_x) {
        double* dx = tp.grad_buf(ix).data() + static_cast<size_t>(i) * nn;
        double s1 = 0.0, s2 = 0.0;
        for (int j = 0; j < nn; ++j) {
          double dh = gr[j] * gam.at(j);
          dxhat[static_cast<size_t>(j)] = dh;
          s1 += dh;
          s2 += dh * xhat[static_cast<size_t>(j)];
        }
        double invn = 1.0 / nn;
        for (int j = 0; j < nn; ++j)
          dx[j] += inv * (dxhat[static_cast<size_t>(j)] - s1 * invn -
                          xhat[static_cast<size_t>(j)] * s2 * invn);
      }
    }
  });
  return Var{id, &t};
}

Var dwconv_causal(Var x, Var w, Var b) {
  check_same_tape(x, w, "dwconv_causal");
  check_same_tape(w, b, "dwconv_causal");
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  const Tensor& wv = t.value(w);
  const Tensor& bv = t.value(b);
  LGMOE_CHECK(xv.rank() == 2 && wv.rank() == 2, "dwconv_causal: expected 2-D tensors");
  int frames = xv.dim(0), d = xv.dim(1), kernel = wv.dim(1);
  LGMOE_CHECK(wv.dim(0) == d && bv.rank() == 1 && bv.dim(0) == d,
              "dwconv_causal: weights " << wv.shape_str() << " do not match input "
                                        << xv.shape_str());
  Tensor out({frames, d});
  for (int fr = 0; fr < frames; ++fr) {
    for (int c = 0; c < d; ++c) {
      double s = bv.at(c);
      for (int j = 0; j < kernel; ++j) {
        int src = fr - kernel + 1 + j;
        if (src >= 0) s += wv.at(c, j) * xv.at(src, c);
      }
      out.at(fr, c) = s;
    }
  }
  bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
  int ix = x.id, iw = w.id, ib = b.id;
  int id = t.emit("dwconv_causal", std::move(out), rg,
                  [ix, iw, ib, frames, d, kernel](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    const Tensor& xin = tp.value_at(ix);
    const Tensor& win = tp.value_at(iw);
    bool need_x = tp.requires_grad(Var{ix, &tp});
    bool need_w = tp.requires_grad(Var{iw, &tp});
    bool need_b = tp.requires_grad(Var{ib, &tp});
    for (int fr = 0; fr < frames; ++fr) {
      for (int c = 0; c < d; ++c) {
        double go = g.at(fr, c);
        if (go == 0.0) continue;
        if (need_b) tp.grad_buf(ib).at(c) += go;
        for (int j = 0; j < kernel; ++j) {
          int src = fr - kernel + 1 + j;
          if (src < 0) continue;
          if (need_w) tp.grad_buf(iw).at(c, j) += go * xin.at(src, c);
          if (need_x) tp.grad_buf(ix).at(src, c) += go * win.at(c, j);
        }
      }
    }
  });
  return Var{id, &t};
}

Var gather_rows(Var x, const std::vector<int>& idx) {
  LGMOE_CHECK(x.valid(), "gather_rows: invalid var");
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  LGMOE_CHECK(xv.rank() == 2, "gather_rows: expected 2-D tensor, got " << xv.shape_str());
  int m = xv.dim(0), n = xv.dim(1);
  Tensor out({static_cast<int>(idx.size()), n});
  for (size_t r = 0; r < idx.size(); ++r) {
    LGMOE_CHECK(idx[r] >= 0 && idx[r] < m, "gather_rows: index " << idx[r] << " out of range");
    std::memcpy(out.data() + r * static_cast<size_t>(n),
                xv.data() + static_cast<size_t>(idx[r]) * n, sizeof(double) * n);
  }
  int ix = x.id;
  std::vector<int> ids = idx;
  int id = t.emit("gather_rows", std::move(out), t.requires_grad(x),
                  [ix, n, ids = std::move(ids)](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    Tensor& dx = tp.grad_buf(ix);
    for (size_t r = 0; r < ids.size(); ++r)
      K().axpy(1.0, g.data() + r * static_cast<size_t>(n),
               dx.data() + static_cast<size_t>(ids[r]) * n, static_cast<size_t>(n));
  });
  return Var{id, &t};
}

Var combine_rows(const std::vector<Var>& parts, const std::vector<std::vector<int>>& idx,
                 int total_rows) {
  LGMOE_CHECK(!parts.empty(), "combine_rows: no parts");
  LGMOE_CHECK(parts.size() == idx.size(), "combine_rows: parts/index count mismatch");
  Tape& t = *parts[0].tape;
  int n = -1;
  bool rg = false;
  for (size_t p = 0; p < parts.size(); ++p) {
    LGMOE_CHECK(parts[p].tape == &t, "combine_rows: vars live on different tapes");
    const Tensor& pv = t.value(parts[p]);
    LGMOE_CHECK(pv.rank() == 2, "combine_rows: expected 2-D parts");
    if (n < 0 && pv.dim(1) > 0) n = pv.dim(1);
    LGMOE_CHECK(pv.dim(0) == static_cast<int>(idx[p].size()),
                "combine_rows: part " << p << " has " << pv.dim(0) << " rows, expected "
                                      << idx[p].size());
    rg = rg || t.requires_grad(parts[p]);
  }
  LGMOE_CHECK(n >= 0, "combine_rows: all parts empty with unknown width");
  Tensor out({total_rows, n});
  std::vector<uint8_t> written(static_cast<size_t>(total_rows), 0);
  for (size_t p = 0; p < parts.size(); ++p) {
    const Tensor& pv = t.value(parts[p]);
    for (size_t r = 0; r < idx[p].size(); ++r) {
      int dst = idx[p][r];
      LGMOE_CHECK(dst >= 0 && dst < total_rows,
                  "combine_rows: index " << dst << " out of range [0," << total_rows << ")");
      const double* src = pv.data() + r * static_cast<size_t>(n);
      double* dp = out.data() + static_cast<size_t>(dst) * n;
      if (!written[static_cast<size_t>(dst)]) {
        std::memcpy(dp, src, sizeof(double) * static_cast<size_t>(n));
        written[static_cast<size_t>(dst)] = 1;
      } else {
        K().add(dp, src, dp, static_cast<size_t>(n));
      }
    }
  }
  std::vector<int> part_ids(parts.size());
  for (size_t p = 0; p < parts.size(); ++p) part_ids[p] = parts[p].id;
  auto idx_copy = idx;
  int id = t.emit("combine_rows", std::move(out), rg,
                  [part_ids = std::move(part_ids), idx_copy = std::move(idx_copy),
                   n](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    for (size_t p = 0; p < part_ids.size(); ++p) {
      if (!tp.requires_grad(Var{part_ids[p], &tp})) continue;
      Tensor& dp = tp.grad_buf(part_ids[p]);
      for (size_t r = 0; r < idx_copy[p].size(); ++r)
        K().axpy(1.0, g.data() + static_cast<size_t>(idx_copy[p][r]) * n,
                 dp.data() + r * static_cast<size_t>(n), static_cast<size_t>(n));
    }
  });
  return Var{id, &t};
}

Var gather_cols(Var x, const std::vector<std::vector<int>>& cols) {
  LGMOE_CHECK(x.valid(), "gather_cols: invalid var");
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  LGMOE_CHECK(xv.rank() == 2, "gather_cols: expected 2-D tensor, got " << xv.shape_str());
  int m = xv.dim(0), n = xv.dim(1);
  LGMOE_CHECK(static_cast<int>(cols.size()) == m,
              "gather_cols: need one column list per row");
  int k = m > 0 ? static_cast<int>(cols[0].size()) : 0;
  Tensor out({m, k});
  for (int i = 0; i < m; ++i) {
    LGMOE_CHECK(static_cast<int>(cols[static_cast<size_t>(i)].size()) == k,
                "gather_cols: ragged column lists");
    for (int j = 0; j < k; ++j) {
      int c = cols[static_cast<size_t>(i)][static_cast<size_t>(j)];
      LGMOE_CHECK(c >= 0 && c < n, "gather_cols: column " << c << " out of range");
      out.at(i, j) = xv.at(i, c);
    }
  }
  int ix = x.id;
  auto cols_copy = cols;
  int id = t.emit("gather_cols", std::move(out), t.requires_grad(x),
                  [ix, k, cols_copy = std::move(cols_copy)](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    Tensor& dx = tp.grad_buf(ix);
    for (int i = 0; i < static_cast<int>(cols_copy.size()); ++i)
      for (int j = 0; j < k; ++j)
        dx.at(i, cols_copy[static_cast<size_t>(i)][static_cast<size_t>(j)]) += g.at(i, j);
  });
  return Var{id, &t};
}

Var scale_rows(Var x, Var s) {
  check_same_tape(x, s, "scale_rows");
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  const Tensor& sv = t.value(s);
  LGMOE_CHECK(xv.rank() == 2, "scale_rows: expected 2-D tensor");
  int m = xv.dim(0), n = xv.dim(1);
  LGMOE_CHECK(sv.numel() == m,
              "scale_rows: scales " << sv.shape_str() << " do not match " << xv.shape_str());
  Tensor out(xv.shape());
  K().scale_rows(xv.data(), sv.data(), out.data(), m, n);
  bool rg = t.requires_grad(x) || t.requires_grad(s);
  int ix = x.id, is = s.id;
  int id = t.emit("scale_rows", std::move(out), rg, [ix, is, m, n](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    const Tensor& xin = tp.value_at(ix);
    const Tensor& sin = tp.value_at(is);
    if (tp.requires_grad(Var{ix, &tp})) {
      Tensor& dx = tp.grad_buf(ix);
      for (int i = 0; i < m; ++i)
        K().axpy(sin.data()[i], g.data() + static_cast<size_t>(i) * n,
                 dx.data() + static_cast<size_t>(i) * n, static_cast<size_t>(n));
    }
    if (tp.requires_grad(Var{is, &tp})) {
      Tensor& ds = tp.grad_buf(is);
      for (int i = 0; i < m; ++i)
        ds.data()[i] += K().dot(g.data() + static_cast<size_t>(i) * n,
                                xin.data() + static_cast<size_t>(i) * n, static_cast<size_t>(n));
    }
  });
  return Var{id, &t};
}

Var concat_rows(const std::vector<Var>& parts) {
  LGMOE_CHECK(!parts.empty(), "concat_rows: no parts");
  Tape& t = *parts[0].tape;
  int n = -1, total = 0;
  bool rg = false;
  for (const Var& p : parts) {
    LGMOE_CHECK(p.tape == &t, "concat_rows: vars live on different tapes");
    const Tensor& pv = t.value(p);
    LGMOE_CHECK(pv.rank() == 2, "concat_rows: expected 2-D parts");
    if (n < 0) n = pv.dim(1);
    LGMOE_CHECK(pv.dim(1) == n, "concat_rows: column mismatch");
    total += pv.dim(0);
    rg = rg || t.requires_grad(p);
  }
  Tensor out({total, n});
  int row = 0;
  for (const Var& p : parts) {
    const Tensor& pv = t.value(p);
    std::memcpy(out.data() + static_cast<size_t>(row) * n, pv.data(),
                sizeof(double) * static_cast<size_t>(pv.numel()));
    row += pv.dim(0);
  }
  std::vector<int> part_ids(parts.size());
  std::vector<int> part_rows(parts.size());
  for (size_t p = 0; p < parts.size(); ++p) {
    part_ids[p] = parts[p].id;
    part_rows[p] = t.value(parts[p]).dim(0);
  }
  int id = t.emit("concat_rows", std::move(out), rg,
                  [part_ids = std::move(part_ids), part_rows = std::move(part_rows),
                   n](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    int row = 0;
    for (size_t p = 0; p < part_ids.size(); ++p) {
      if (tp.requires_grad(Var{part_ids[p], &tp})) {
        Tensor& dp = tp.grad_buf(part_ids[p]);
        K().axpy(1.0, g.data() + static_cast<size_t>(row) * n, dp.data(),
                 static_cast<size_t>(part_rows[p]) * n);
      }
      row += part_rows[p];
    }
  });
  return Var{id, &t};
}

Var slice_rows(Var x, int lo, int hi) {
  LGMOE_CHECK(x.valid(), "slice_rows: invalid var");
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  LGMOE_CHECK(xv.rank() == 2, "slice_rows: expected 2-D tensor");
  int m = xv.dim(0), n = xv.dim(1);
  LGMOE_CHECK(0 <= lo && lo <= hi && hi <= m,
              "slice_rows: range [" << lo << "," << hi << ") invalid for " << xv.shape_str());
  Tensor out({hi - lo, n});
  std::memcpy(out.data(), xv.data() + static_cast<size_t>(lo) * n,
              sizeof(double) * static_cast<size_t>(out.numel()));
  int ix = x.id;
  int id = t.emit("slice_rows", std::move(out), t.requires_grad(x),
                  [ix, lo, hi, n](Tape& tp, int o) {
    const Tensor& g = tp.grad_buf(o);
    Tensor& dx = tp.grad_buf(ix);
    K().axpy(1.0, g.data(), dx.data() + static_cast<size_t>(lo) * n,
             static_cast<size_t>(hi - lo) * n);
  });
  return Var{id, &t};
}

Var sum(Var x) {
  LGMOE_CHECK(x.valid(), "sum: invalid var");
  Tape& t = *x.tape;
  const Tensor& xv = t.value(x);
  Tensor out = Tensor::scalar(K().reduce_sum(xv.data(), static_cast<size_t>(xv.numel())));
  int ix = x.id;
  int id = t.emit("sum", std::move(out), t.requires_grad(x), [ix](Tape& tp, int o) {
    double g = tp.grad_buf(o).at(0);
    Tensor& dx = tp.grad_buf(ix);
    for (int64_t i = 0; i < dx.numel(); ++i) dx.data()[i] += g;
  });
  return Var{id, &t};
}

}  // namespace lgmoe
