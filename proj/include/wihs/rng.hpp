// rng.hpp — counter-based random stream (splitmix64 finalizer).
//
// Each logical stream is addressed by (seed, stream id); draws are pure
// functions of the counter, so per-sample streams can be evaluated in any
// order (or in parallel) and still reproduce bit-identically.
#pragma once

#include <cstdint>

namespace wihs {

namespace detail {
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
} // namespace detail

class CounterRng {
public:
    CounterRng(std::uint64_t seed, std::uint64_t stream)
        : key_(detail::mix64(seed ^ detail::mix64(stream + 0x632be59bd9b4e019ULL))),
          ctr_(0) {}

    std::uint64_t next_u64() { return detail::mix64(key_ + 0x9e3779b97f4a7c15ULL * ++ctr_); }

    /// Uniform double in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double next_double(double lo, double hi) { return lo + (hi - lo) * next_double(); }

    /// Uniform in [-1, 1).
    double next_symmetric() { return 2.0 * next_double() - 1.0; }

private:
    std::uint64_t key_;
    std::uint64_t ctr_;
};

} // namespace wihs
