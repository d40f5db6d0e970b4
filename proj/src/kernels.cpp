#include "lgmoe/kernels.hpp"

#include <cstdlib>

#include "lgmoe/common.hpp"

namespace lgmoe::kern {
namespace {

const Backend* g_active = nullptr;

const Backend* resolve_default() {
  if (const char* env = std::getenv("LGMOE_KERNELS")) {
    std::string name(env);
    if (name == "scalar") return &scalar_backend();
#if defined(__x86_64__) || defined(_M_X64)
    if (name == "avx2") {
      LGMOE_CHECK(avx2_supported(), "LGMOE_KERNELS=avx2 but CPU lacks AVX2/FMA");
      return &avx2_backend();
    }
#endif
    LGMOE_CHECK(false, "unknown LGMOE_KERNELS value: " << name);
  }
#if defined(__x86_64__) || defined(_M_X64)
  if (avx2_supported()) return &avx2_backend();
#endif
  return &scalar_backend();
}

}  // namespace

const Backend& active() {
  if (!g_active) g_active = resolve_default();
  return *g_active;
}

void select(const std::string& name) {
  if (name == "scalar") {
    g_active = &scalar_backend();
    return;
  }
#if defined(__x86_64__) || defined(_M_X64)
  if (name == "avx2") {
    LGMOE_CHECK(avx2_supported(), "avx2 backend not supported on this CPU");
    g_active = &avx2_backend();
    return;
  }
#endif
  LGMOE_CHECK(false, "unknown kernel backend: " << name);
}

std::vector<std::string> available() {
  std::vector<std::string> names{"scalar"};
#if defined(__x86_64__) || defined(_M_X64)
  if (avx2_supported()) names.push_back("avx2");
#endif
  return names;
}

}  // namespace lgmoe::kern
