#ifndef SIAG_RNG_HPP
#define SIAG_RNG_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace siag {

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Folds a sequence of identifiers into one 64-bit stream key.
constexpr std::uint64_t derive_key(std::uint64_t seed,
                                   std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = mix64(seed + 0x9e3779b97f4a7c15ULL);
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

/// Domain tags so that streams with different purposes never share a key.
enum class StreamTag : std::uint64_t {
  kInstance = 0x1001,
  kSample = 0x2002,
  kSchedule = 0x3003,
  kCaps = 0x4004,
  kNoiseProbe = 0x5005,
};

/**
 * Counter-based random stream.
 *
 * Output k of the stream keyed by `key` is mix64(key + k * golden), i.e.
 * SplitMix64 started at an arbitrary key. Because every draw is a pure
 * function of (key, counter), a stream can be positioned anywhere without
 * replaying earlier draws, which is what makes trials order-independent and
 * checkpoints free of generator state.
 *
 * Satisfies UniformRandomBitGenerator.
 */
class Stream {
 public:
  using result_type = std::uint64_t;

  constexpr Stream() noexcept = default;
  constexpr explicit Stream(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  /// Stream for draws made by `worker` at iteration `iter` of trial `trial`.
  static constexpr Stream for_sample(std::uint64_t seed, std::uint64_t trial,
                                     std::uint64_t worker, std::uint64_t iter) noexcept {
    return Stream(derive_key(seed, {static_cast<std::uint64_t>(StreamTag::kSample), trial,
                                    worker, iter}));
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  constexpr result_type operator()() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * 0x9e3779b97f4a7c15ULL);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept {
    return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer on [0, bound). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t bound) noexcept {
    unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * bound;
    auto low = static_cast<std::uint64_t>(m);
    if (low < bound) {
      const std::uint64_t threshold = (0 - bound) % bound;
      while (low < threshold) {
        m = static_cast<unsigned __int128>((*this)()) * bound;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  /// Standard normal draw (Marsaglia polar method, pair cached).
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 0.0;
    double v = 0.0;
    double s = 0.0;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  constexpr std::uint64_t key() const noexcept { return key_; }
  constexpr std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace siag

#endif  // SIAG_RNG_HPP
