#include <cstdlib>
#include <stdexcept>
#include <string>

#include "fedepth/kernels/kernels.hpp"

namespace fedepth::kernels {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return "scalar";
    case Isa::Avx2:
      return "avx2";
    case Isa::Neon:
      return "neon";
  }
  return "unknown";
}

bool cpu_supports(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(FEDEPTH_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::Neon:
#if defined(FEDEPTH_HAVE_NEON)
      return true;  // mandatory on AArch64
#else
      return false;
#endif
  }
  return false;
}

Isa detect_isa() {
  if (const char* forced = std::getenv("FEDEPTH_ISA")) {
    const std::string name(forced);
    if (name == "scalar") return Isa::Scalar;
    if (name == "avx2" && cpu_supports(Isa::Avx2)) return Isa::Avx2;
    if (name == "neon" && cpu_supports(Isa::Neon)) return Isa::Neon;
    return Isa::Scalar;
  }
  if (cpu_supports(Isa::Avx2)) return Isa::Avx2;
  if (cpu_supports(Isa::Neon)) return Isa::Neon;
  return Isa::Scalar;
}

template <class T>
const KernelTable<T>& kernels_for(Isa isa) {
  if (!cpu_supports(isa)) {
    throw std::invalid_argument("kernel variant not available: " + std::string(isa_name(isa)));
  }
  switch (isa) {
#if defined(FEDEPTH_HAVE_AVX2)
    case Isa::Avx2:
      return avx2::table<T>();
#endif
#if defined(FEDEPTH_HAVE_NEON)
    case Isa::Neon:
      return neon::table<T>();
#endif
    default:
      return scalar::table<T>();
  }
}

template <class T>
const KernelTable<T>& active_kernels() {
  static const KernelTable<T>& table = kernels_for<T>(detect_isa());
  return table;
}

template const KernelTable<float>& kernels_for<float>(Isa);
template const KernelTable<double>& kernels_for<double>(Isa);
template const KernelTable<float>& active_kernels<float>();
template const KernelTable<double>& active_kernels<double>();

}  // namespace fedepth::kernels
