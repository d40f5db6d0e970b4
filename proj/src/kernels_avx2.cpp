// AVX2+FMA kernels (4-wide f64). Vector main loops with scalar tails; exp()
// and friends stay scalar in both backends, only the bandwidth- and
// MAC-bound loops are vectorized here. Built with -mavx2 -mfma, selected at
// runtime via cpuid (see kernels.cpp).

#if defined(__x86_64__) || defined(_M_X64)

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include "lgmoe/kernels.hpp"

namespace lgmoe::kern {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

void gemm_nn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
  int n4 = n & ~3;
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      double av = ai[p];
      const double* bp = b + static_cast<size_t>(p) * n;
      __m256d va = _mm256_set1_pd(av);
      int j = 0;
      for (; j < n4; j += 4) {
        __m256d vc = _mm256_loadu_pd(ci + j);
        vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(bp + j), vc);
        _mm256_storeu_pd(ci + j, vc);
      }
      for (; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

inline double dot_impl(const double* x, const double* y, size_t n) {
  size_t n4 = n & ~size_t(3);
  __m256d vs = _mm256_setzero_pd();
  size_t i = 0;
  for (; i < n4; i += 4) {
    vs = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), vs);
  }
  double s = hsum(vs);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void gemm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  for (int i = 0; i < m; ++i) {
    const double* ai = a + static_cast<size_t>(i) * k;
    double* ci = c + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      double s = dot_impl(ai, b + static_cast<size_t>(j) * k, static_cast<size_t>(k));
      ci[j] = acc ? ci[j] + s : s;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc) {
  if (!acc) std::memset(c, 0, sizeof(double) * static_cast<size_t>(k) * n);
  int n4 = n & ~3;
  for (int p = 0; p < m; ++p) {
    const double* ap = a + static_cast<size_t>(p) * k;
    const double* bp = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < k; ++i) {
      double av = ap[i];
      double* ci = c + static_cast<size_t>(i) * n;
      __m256d va = _mm256_set1_pd(av);
      int j = 0;
      for (; j < n4; j += 4) {
        __m256d vc = _mm256_loadu_pd(ci + j);
        vc = _mm256_fmadd_pd(va, _mm256_loadu_pd(bp + j), vc);
        _mm256_storeu_pd(ci + j, vc);
      }
      for (; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

void add(const double* x, const double* y, double* out, size_t n) {
  size_t n4 = n & ~size_t(3), i = 0;
  for (; i < n4; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void sub(const double* x, const double* y, double* out, size_t n) {
  size_t n4 = n & ~size_t(3), i = 0;
  for (; i < n4; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] - y[i];
}

void mul(const double* x, const double* y, double* out, size_t n) {
  size_t n4 = n & ~size_t(3), i = 0;
  for (; i < n4; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale(const double* x, double a, double* out, size_t n) {
  __m256d va = _mm256_set1_pd(a);
  size_t n4 = n & ~size_t(3), i = 0;
  for (; i < n4; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), va));
  for (; i < n; ++i) out[i] = x[i] * a;
}

void axpy(double a, const double* x, double* y, size_t n) {
  __m256d va = _mm256_set1_pd(a);
  size_t n4 = n & ~size_t(3), i = 0;
  for (; i < n4; i += 4) {
    __m256d vy = _mm256_loadu_pd(y + i);
    vy = _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), vy);
    _mm256_storeu_pd(y + i, vy);
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

double dot(const double* x, const double* y, size_t n) { return dot_impl(x, y, n); }

double reduce_sum(const double* x, size_t n) {
  size_t n4 = n & ~size_t(3), i = 0;
  __m256d vs = _mm256_setzero_pd();
  for (; i < n4; i += 4) vs = _mm256_add_pd(vs, _mm256_loadu_pd(x + i));
  double s = hsum(vs);
  for (; i < n; ++i) s += x[i];
  return s;
}

double reduce_max(const double* x, size_t n) {
  size_t i = 0;
  double m;
  if (n >= 4) {
    __m256d vm = _mm256_loadu_pd(x);
    for (i = 4; i + 4 <= n; i += 4) vm = _mm256_max_pd(vm, _mm256_loadu_pd(x + i));
    __m128d lo = _mm256_castpd256_pd128(vm);
    __m128d hi = _mm256_extractf128_pd(vm, 1);
    lo = _mm_max_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    m = _mm_cvtsd_f64(_mm_max_sd(lo, sh));
  } else {
    m = x[0];
    i = 1;
  }
  for (; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

void relu(const double* x, double* out, size_t n) {
  __m256d vz = _mm256_setzero_pd();
  size_t n4 = n & ~size_t(3), i = 0;
  for (; i < n4; i += 4)
    _mm256_storeu_pd(out + i, _mm256_max_pd(_mm256_loadu_pd(x + i), vz));
  for (; i < n; ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd(const double* x, const double* dy, double* dx, size_t n) {
  __m256d vz = _mm256_setzero_pd();
  size_t n4 = n & ~size_t(3), i = 0;
  for (; i < n4; i += 4) {
    __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), vz, _CMP_GT_OQ);
    __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(dy + i));
    _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), g));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0) dx[i] += dy[i];
  }
}

void add_bias(const double* x, const double* b, double* out, int m, int n) {
  for (int i = 0; i < m; ++i)
    add(x + static_cast<size_t>(i) * n, b, out + static_cast<size_t>(i) * n,
        static_cast<size_t>(n));
}

void scale_rows(const double* x, const double* s, double* out, int m, int n) {
  for (int i = 0; i < m; ++i)
    scale(x + static_cast<size_t>(i) * n, s[i], out + static_cast<size_t>(i) * n,
          static_cast<size_t>(n));
}

double centered_sumsq(const double* x, double mean, size_t n) {
  __m256d vm = _mm256_set1_pd(mean);
  __m256d vs = _mm256_setzero_pd();
  size_t n4 = n & ~size_t(3), i = 0;
  for (; i < n4; i += 4) {
    __m256d d = _mm256_sub_pd(_mm256_loadu_pd(x + i), vm);
    vs = _mm256_fmadd_pd(d, d, vs);
  }
  double s = hsum(vs);
  for (; i < n; ++i) {
    double d = x[i] - mean;
    s += d * d;
  }
  return s;
}

void norm_affine(const double* x, double mean, double inv_std, const double* gamma,
                 const double* beta, double* out, size_t n) {
  __m256d vm = _mm256_set1_pd(mean);
  __m256d vi = _mm256_set1_pd(inv_std);
  size_t n4 = n & ~size_t(3), i = 0;
  for (; i < n4; i += 4) {
    __m256d xc = _mm256_mul_pd(_mm256_sub_pd(_mm256_loadu_pd(x + i), vm), vi);
    __m256d r = _mm256_fmadd_pd(xc, _mm256_loadu_pd(gamma + i), _mm256_loadu_pd(beta + i));
    _mm256_storeu_pd(out + i, r);
  }
  for (; i < n; ++i) out[i] = (x[i] - mean) * inv_std * gamma[i] + beta[i];
}

bool all_finite(const double* x, size_t n) {
  const __m256i expmask = _mm256_set1_epi64x(0x7ff0000000000000LL);
  size_t n4 = n & ~size_t(3), i = 0;
  for (; i < n4; i += 4) {
    __m256i bits = _mm256_loadu_si256(reinterpret_cast<const __m256i*>(x + i));
    __m256i e = _mm256_and_si256(bits, expmask);
    __m256i bad = _mm256_cmpeq_epi64(e, expmask);
    if (!_mm256_testz_si256(bad, bad)) return false;
  }
  for (; i < n; ++i) {
    if (!std::isfinite(x[i])) return false;
  }
  return true;
}

}  // namespace

const Backend& avx2_backend() {
  static const Backend b = {
      "avx2",  gemm_nn, gemm_nt,  gemm_tn,    add,        sub,
      mul,     scale,   axpy,     dot,        reduce_sum, reduce_max,
      relu,    relu_bwd, add_bias, scale_rows, centered_sumsq, norm_affine,
      all_finite,
  };
  return b;
}

bool avx2_supported() {
#if defined(__GNUC__) || defined(__clang__)
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

}  // namespace lgmoe::kern

#endif  // x86_64
