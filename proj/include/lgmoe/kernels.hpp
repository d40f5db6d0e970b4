#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace lgmoe::kern {

/// Function-pointer table for the f64 inner loops. Two implementations ship:
/// a scalar reference and an AVX2+FMA variant; the active one is picked at
/// runtime (cpuid, overridable via LGMOE_KERNELS=scalar|avx2 or select()).
/// The SIMD variant must agree with the scalar reference within floating-point
/// reassociation error; tests/test_kernels.cpp enforces this.
struct Backend {
  const char* name;

  // C[m x n] = A[m x k] * B[k x n], accumulating into C when acc is set.
  void (*gemm_nn)(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
  // C[m x n] = A[m x k] * B[n x k]^T
  void (*gemm_nt)(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
  // C[k x n] = A[m x k]^T * B[m x n]
  void (*gemm_tn)(const double* a, const double* b, double* c, int m, int k, int n, bool acc);

  void (*add)(const double* x, const double* y, double* out, size_t n);
  void (*sub)(const double* x, const double* y, double* out, size_t n);
  void (*mul)(const double* x, const double* y, double* out, size_t n);
  void (*scale)(const double* x, double a, double* out, size_t n);
  void (*axpy)(double a, const double* x, double* y, size_t n);  // y += a*x
  double (*dot)(const double* x, const double* y, size_t n);
  double (*reduce_sum)(const double* x, size_t n);
  double (*reduce_max)(const double* x, size_t n);  // n >= 1

  void (*relu)(const double* x, double* out, size_t n);
  void (*relu_bwd)(const double* x, const double* dy, double* dx, size_t n);  // dx += dy*(x>0)

  // out[i][:] = x[i][:] + b  for i in [0, m)
  void (*add_bias)(const double* x, const double* b, double* out, int m, int n);
  // out[i][:] = x[i][:] * s[i]
  void (*scale_rows)(const double* x, const double* s, double* out, int m, int n);

  double (*centered_sumsq)(const double* x, double mean, size_t n);
  // out = (x - mean) * inv_std * gamma + beta  (gamma/beta length n)
  void (*norm_affine)(const double* x, double mean, double inv_std, const double* gamma,
                      const double* beta, double* out, size_t n);

  bool (*all_finite)(const double* x, size_t n);
};

const Backend& scalar_backend();
#if defined(__x86_64__) || defined(_M_X64)
const Backend& avx2_backend();
bool avx2_supported();
#endif

/// Currently selected backend. First call resolves the default: the
/// LGMOE_KERNELS environment variable if set, else AVX2 when the CPU has it,
/// else scalar.
const Backend& active();

/// Force a backend by name ("scalar", "avx2"). Throws on unknown/unsupported.
void select(const std::string& name);

std::vector<std::string> available();

}  // namespace lgmoe::kern
