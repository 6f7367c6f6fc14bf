#pragma once

#include <cblas.h>

#include <cstdlib>
#include <string_view>

#if defined(__linux__)
#include <unistd.h>
#endif

namespace tgda::runtime {

// Ubuntu's OpenBLAS falls back to a pre-SSE3 kernel when it cannot identify
// the CPU (common inside VMs), costing ~4-6x on GEMM. The core type is fixed
// before main() runs, so the only reliable fix is to set OPENBLAS_CORETYPE
// and re-exec once. Call this first thing in main(); it returns immediately
// when the kernel is already fine or the env was set by the user.
inline void tune_blas(char** argv) {
#if defined(__linux__) && (defined(__x86_64__) || defined(__i386__))
  if (std::getenv("OPENBLAS_CORETYPE") || std::getenv("TGDA_NO_BLAS_TUNE")) return;
  const char* name = openblas_get_corename();
  if (!name) return;
  std::string_view core(name);
  if (core != "Prescott" && core != "Northwood" && core != "Katmai" && core != "generic") return;
  const char* target = nullptr;
  if (__builtin_cpu_supports("avx512f") && __builtin_cpu_supports("avx512dq"))
    target = "SKYLAKEX";
  else if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma"))
    target = "HASWELL";
  else if (__builtin_cpu_supports("sse3"))
    target = "CORE2";
  if (!target) return;
  setenv("OPENBLAS_CORETYPE", target, 1);
  execv("/proc/self/exe", argv);
  // exec failed: continue with the slow kernel rather than abort.
  unsetenv("OPENBLAS_CORETYPE");
#else
  (void)argv;
#endif
}

}  // namespace tgda::runtime
