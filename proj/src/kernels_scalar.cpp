// Scalar reference kernels. These are the semantics the SIMD variants are
// tested against; keep them simple.

#include <algorithm>
#include <cmath>
#include <cstring>

#include "lgmoe/kernels.hpp"

namespace lgmoe::kern {
namespace {

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = ai[p];
      const double* bp = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = acc ? ci[j] + s : s;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(double) * static_cast<size_t>(k) * n);
  for (int p = 0; p < m; ++p) {
    const double* ap = a + static_cast<size_t>(p) * k;
    const double* bp = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < k; ++i) {
      double av = ap[i];
      double* ci = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void add(const double* x, const double* y, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

void sub(const double* x, const double* y, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] - y[i];
}

void mul(const double* x, const double* y, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

void scale(const double* x, double a, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] * a;
}

void axpy(double a, const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

double dot(const double* x, const double* y, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

double reduce_sum(const double* x, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) s += x[i];
  return s;
}

double reduce_max(const double* x, size_t n) {
  double m = x[0];
  for (size_t i = 1; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

void relu(const double* x, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd(const double* x, const double* dy, double* dx, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    if (x[i] > 0.0) dx[i] += dy[i];
  }
}

void add_bias(const double* x, const double* b, double* out, int m, int n) {
  for (int i = 0; i < m; ++i) {
    const double* xi = x + static_cast<size_t>(i) * n;
    double* oi = out + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) oi[j] = xi[j] + b[j];
  }
}

void scale_rows(const double* x, const double* s, double* out, int m, int n) {
  for (int i = 0; i < m; ++i) {
    const double* xi = x + static_cast<size_t>(i) * n;
    double* oi = out + static_cast<size_t>(i) * n;
    double si = s[i];
    for (int j = 0; j < n; ++j) oi[j] = xi[j] * si;
  }
}

double centered_sumsq(const double* x, double mean, size_t n) {
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double d = x[i] - mean;
    s += d * d;
  }
  return s;
}

void norm_affine(const double* x, double mean, double inv_std, const double* gamma,
                 const double* beta, double* out, size_t n) {
  for (size_t i = 0; i < n; ++i) out[i] = (x[i] - mean) * inv_std * gamma[i] + beta[i];
}

bool all_finite(const double* x, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i])) return false;
  }
  return true;
}

}  // namespace

const Backend& scalar_backend() {
  static const Backend b = {
      "scalar", gemm_nn, gemm_nt,  gemm_tn,    add,        sub,
      mul,      scale,   axpy,     dot,        reduce_sum, reduce_max,
      relu,     relu_bwd, add_bias, scale_rows, centered_sumsq, norm_affine,
      all_finite,
  };
  return b;
}

}  // namespace lgmoe::kern
