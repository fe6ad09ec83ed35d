#pragma once
// Vector kernels behind every arithmetic inner loop of the engine.
//
// Each kernel has a scalar reference implementation and optional SIMD
// variants (AVX2+FMA on x86-64, NEON on AArch64). The variant is chosen once
// at startup from the running CPU; FEDEPTH_ISA=scalar|avx2|neon in the
// environment forces a specific table (falling back to scalar if the CPU
// lacks it). All callers go through active_kernels<T>() so that two code
// paths computing the same quantity see the same rounding.

#include <cstddef>
#include <string_view>

namespace fedepth::kernels {

enum class Isa { Scalar, Avx2, Neon };

std::string_view isa_name(Isa isa);

template <class T>
struct KernelTable {
  Isa isa;
  // sum_i x[i] * y[i]
  T (*dot)(const T* x, const T* y, std::size_t n);
  // y += a * x
  void (*axpy)(T a, const T* x, T* y, std::size_t n);
  // y += x
  void (*add)(const T* x, T* y, std::size_t n);
  // x *= a
  void (*scale)(T a, T* x, std::size_t n);
  // y = max(x, 0)
  void (*relu)(const T* x, T* y, std::size_t n);
  // out = x > 0 ? g : 0
  void (*relu_backward)(const T* x, const T* g, T* out, std::size_t n);
  // sum_i x[i]
  T (*sum)(const T* x, std::size_t n);
};

/// True if the running CPU can execute the given variant.
bool cpu_supports(Isa isa);

/// Best variant for this CPU, honouring FEDEPTH_ISA.
Isa detect_isa();

/// Kernel table of a specific variant. Throws std::invalid_argument if the
/// variant was not compiled in or the CPU does not support it.
template <class T>
const KernelTable<T>& kernels_for(Isa isa);

/// The process-wide table selected by detect_isa().
template <class T>
const KernelTable<T>& active_kernels();

namespace scalar {
template <class T>
const KernelTable<T>& table();
}

#if defined(FEDEPTH_HAVE_AVX2)
namespace avx2 {
template <class T>
const KernelTable<T>& table();
}
#endif

#if defined(FEDEPTH_HAVE_NEON)
namespace neon {
template <class T>
const KernelTable<T>& table();
}
#endif

}  // namespace fedepth::kernels
