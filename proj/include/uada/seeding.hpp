#ifndef UADA_SEEDING_HPP
#define UADA_SEEDING_HPP

#include <cstdint>
#include <initializer_list>

namespace uada {

/// SplitMix64 finalizer. Used to derive independent child seeds from a master
/// seed and a tuple of counters, so that every patient/slice/style stream can
/// be generated in any order (or in parallel) with identical results.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master,
                                    std::initializer_list<std::uint64_t> counters) noexcept {
    std::uint64_t s = splitmix64(master);
    for (auto c : counters) s = splitmix64(s ^ splitmix64(c + 0x632BE59BD9B4E019ull));
    return s;
}

}  // namespace uada

#endif  // UADA_SEEDING_HPP
