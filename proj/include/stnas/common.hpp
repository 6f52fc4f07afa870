#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <string_view>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace stnas {

// Scalar type used for all tensor storage and arithmetic. 64-bit keeps the
// finite-difference tolerances achievable; checkpoints are written as f32.
using real = double;
using i64 = std::int64_t;

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape or axis incompatibility between tensors.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Value outside its legal range (labels, sampling arguments, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// Invalid or inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Caps intra-step parallelism from the STNAS_THREADS environment variable.
// Called once by entry points; a no-op when the variable is absent.
inline void configure_threads_from_env() {
#ifdef _OPENMP
    if (const char* env = std::getenv("STNAS_THREADS")) {
        int n = std::atoi(env);
        if (n > 0) omp_set_num_threads(n);
    }
#endif
}

inline int thread_count() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

// Data-parallel loop over [0, n). Work items must write disjoint outputs;
// any reduction inside an item runs in its fixed sequential order, so results
// are bit-identical for every thread count.
template <class Fn>
inline void parallel_for(i64 n, Fn&& fn) {
#ifdef _OPENMP
    if (n > 1 && omp_get_max_threads() > 1) {
#pragma omp parallel for schedule(static)
        for (i64 i = 0; i < n; ++i) fn(i);
        return;
    }
#endif
    for (i64 i = 0; i < n; ++i) fn(i);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// Round-trip-exact decimal rendering, used by all text artifacts so that
// identical runs produce identical files.
inline std::string fmt_real(real v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string fmt_fixed(real v, int digits = 6) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

}  // namespace stnas
