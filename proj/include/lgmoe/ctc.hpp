#pragma once

#include <vector>

#include "lgmoe/autograd.hpp"

namespace lgmoe {

/// Class index reserved for the CTC blank in every head (ASR and LID alike).
constexpr int kCtcBlank = 0;

/// Log-zero sentinel: keeps the tape finite where a true -inf would appear.
constexpr double kLogZero = -1e30;

/// Label sequence for CTC scoring. Labels are class indices in [1, C-1];
/// the blank never appears here.
struct CtcLabelSeq {
  std::vector<int> labels;

  CtcLabelSeq() = default;
  explicit CtcLabelSeq(std::vector<int> l);
  int length() const { return static_cast<int>(labels.size()); }
};

struct CtcLoss {
  Var loss;       // scalar -log P(labels | log_probs), sum over time
  bool feasible;  // false when no alignment exists (loss is the sentinel)
};

/// CTC loss via the forward algorithm over the blank-interleaved label
/// sequence, computed in log space. Differentiable w.r.t. log_probs (which
/// need not be normalized rows; anything the upstream log_softmax emits).
CtcLoss ctc_loss(Var log_probs, const CtcLabelSeq& labels);

/// Value-level core: returns -log P and, when grad_out is non-null, writes
/// d(-log P)/d(log_probs) into it. Used by ctc_loss and directly testable.
double ctc_forward_backward(const Tensor& log_probs, const CtcLabelSeq& labels,
                            Tensor* grad_out);

/// Per-frame argmax, collapse repeats, drop blanks.
std::vector<int> ctc_greedy_decode(const Tensor& log_probs);

}  // namespace lgmoe
