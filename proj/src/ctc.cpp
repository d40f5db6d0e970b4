#include "lgmoe/ctc.hpp"

#include <algorithm>
#include <cmath>

namespace lgmoe {

namespace {

inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kLogZero * 0.5) return a;
  return a + std::log1p(std::exp(b - a));
}

inline bool is_log_zero(double x) { return x <= kLogZero * 0.5; }

}  // namespace

CtcLabelSeq::CtcLabelSeq(std::vector<int> l) : labels(std::move(l)) {
  for (int lab : labels)
    LGMOE_CHECK(lab != kCtcBlank, "CtcLabelSeq: blank (" << kCtcBlank << ") is not a label");
}

double ctc_forward_backward(const Tensor& log_probs, const CtcLabelSeq& labels,
                            Tensor* grad_out) {
  LGMOE_CHECK(log_probs.rank() == 2,
              "ctc_loss: log_probs must be T x C, got " << log_probs.shape_str());
  LGMOE_CHECK(log_probs.all_finite(), "ctc_loss: non-finite log_probs");
  const int frames = log_probs.dim(0);
  const int classes = log_probs.dim(1);
  LGMOE_CHECK(frames >= 1 && classes >= 1, "ctc_loss: empty log_probs");
  for (int lab : labels.labels)
    LGMOE_CHECK(lab >= 1 && lab < classes,
                "ctc_loss: label " << lab << " out of range [1," << classes << ")");

  // extended sequence: blank, l1, blank, l2, ..., blank
  const int u = labels.length();
  const int s_len = 2 * u + 1;
  auto ext = [&](int s) { return (s % 2 == 0) ? kCtcBlank : labels.labels[(s - 1) / 2]; };

  if (grad_out) *grad_out = Tensor::zeros(log_probs.shape());

  std::vector<double> alpha(static_cast<size_t>(frames) * s_len, kLogZero);
  auto a = [&](int t, int s) -> double& { return alpha[static_cast<size_t>(t) * s_len + s]; };

  a(0, 0) = log_probs.at(0, kCtcBlank);
  if (s_len > 1) a(0, 1) = log_probs.at(0, ext(1));
  for (int t = 1; t < frames; ++t) {
    for (int s = 0; s < s_len; ++s) {
      double best = a(t - 1, s);
      if (s >= 1) best = log_add(best, a(t - 1, s - 1));
      if (s >= 2 && ext(s) != kCtcBlank && ext(s) != ext(s - 2))
        best = log_add(best, a(t - 1, s - 2));
      if (is_log_zero(best)) {
        a(t, s) = kLogZero;
      } else {
        a(t, s) = best + log_probs.at(t, ext(s));
      }
    }
  }
  double log_p = a(frames - 1, s_len - 1);
  if (s_len > 1) log_p = log_add(log_p, a(frames - 1, s_len - 2));

  if (is_log_zero(log_p)) {
    // no feasible alignment; gradient is zero
    return -kLogZero;
  }

  if (grad_out) {
    // beta excludes the emission at its own frame, so alpha+beta counts each
    // emission exactly once
    std::vector<double> beta(static_cast<size_t>(frames) * s_len, kLogZero);
    auto b = [&](int t, int s) -> double& { return beta[static_cast<size_t>(t) * s_len + s]; };
    b(frames - 1, s_len - 1) = 0.0;
    if (s_len > 1) b(frames - 1, s_len - 2) = 0.0;
    for (int t = frames - 2; t >= 0; --t) {
      for (int s = 0; s < s_len; ++s) {
        double acc = kLogZero;
        for (int s2 = s; s2 <= s + 2 && s2 < s_len; ++s2) {
          if (s2 == s + 2 && (ext(s2) == kCtcBlank || ext(s2) == ext(s))) continue;
          double via = b(t + 1, s2);
          if (is_log_zero(via)) continue;
          acc = log_add(acc, via + log_probs.at(t + 1, ext(s2)));
        }
        b(t, s) = acc;
      }
    }
    for (int t = 0; t < frames; ++t) {
      for (int s = 0; s < s_len; ++s) {
        double ab = a(t, s);
        double bb = b(t, s);
        if (is_log_zero(ab) || is_log_zero(bb)) continue;
        double w = ab + bb - log_p;
        grad_out->at(t, ext(s)) -= std::exp(w);
      }
    }
  }
  return -log_p;
}

CtcLoss ctc_loss(Var log_probs, const CtcLabelSeq& labels) {
  LGMOE_CHECK(log_probs.valid(), "ctc_loss: invalid var");
  Tape& t = *log_probs.tape;
  const Tensor& lp = t.value(log_probs);
  bool rg = t.requires_grad(log_probs);
  Tensor grad;
  double loss = ctc_forward_backward(lp, labels, rg ? &grad : nullptr);
  bool feasible = loss < -kLogZero * 0.5;
  int ix = log_probs.id;
  int id = t.emit("ctc_loss", Tensor::scalar(loss), rg,
                  [ix, grad = std::move(grad)](Tape& tp, int o) {
    double g = tp.grad_buf(o).at(0);
    if (grad.empty()) return;
    Tensor& dx = tp.grad_buf(ix);
    for (int64_t i = 0; i < dx.numel(); ++i) dx.data()[i] += g * grad.data()[i];
  });
  return CtcLoss{Var{id, &t}, feasible};
}

std::vector<int> ctc_greedy_decode(const Tensor& log_probs) {
  LGMOE_CHECK(log_probs.rank() == 2,
              "ctc_greedy_decode: log_probs must be T x C, got " << log_probs.shape_str());
  std::vector<int> out;
  int prev = kCtcBlank;
  for (int t = 0; t < log_probs.dim(0); ++t) {
    int best = 0;
    double bv = log_probs.at(t, 0);
    for (int c = 1; c < log_probs.dim(1); ++c) {
      if (log_probs.at(t, c) > bv) {
        bv = log_probs.at(t, c);
        best = c;
      }
    }
    if (best != kCtcBlank && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace lgmoe
