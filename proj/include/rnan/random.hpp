#ifndef RNAN_RANDOM_HPP_
#define RNAN_RANDOM_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>

namespace rnan {

/// SplitMix64 finalizer (Steele, Lea & Flood 2014).
constexpr std::uint64_t mix64(std::uint64_t z) {
	z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
	z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
	return z ^ (z >> 31);
}

/// Combines a seed with any number of stream keys into an independent seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed) { return seed; }
template<typename... Keys>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key, Keys... rest) {
	return derive_seed(mix64(seed ^ mix64(key + 0x9E3779B97F4A7C15ULL)), static_cast<std::uint64_t>(rest)...);
}

/**
 * Counter-based SplitMix64 stream: value k of stream s is mix64(s + (k+1)·γ)
 * with γ the 64-bit golden ratio. Any position can be computed directly, so
 * results do not depend on how draws are partitioned between callers.
 *
 * Uniform reals use the top 53 bits; normals use Box-Muller with both
 * outputs consumed in order. Only <cmath> transcendental functions are
 * involved, so sequences are identical on any IEEE-754 platform with a
 * correctly rounded libm.
 */
class CounterRng {
public:
	static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

	explicit CounterRng(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

	std::uint64_t next_u64() { return mix64(seed_ + (++counter_) * kGamma); }

	/// Uniform in [0, 1).
	double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

	double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

	/// Uniform integer in [0, bound) by rejection; bound must be positive.
	std::uint64_t below(std::uint64_t bound) {
		const std::uint64_t limit = ~std::uint64_t(0) - (~std::uint64_t(0) % bound);
		std::uint64_t r;
		do r = next_u64();
		while (r >= limit);
		return r % bound;
	}

	double normal() {
		if (has_spare_) {
			has_spare_ = false;
			return spare_;
		}
		double u1;
		do u1 = uniform();
		while (u1 <= 0.0);
		const double u2 = uniform();
		const double r = std::sqrt(-2.0 * std::log(u1));
		const double theta = 2.0 * std::numbers::pi * u2;
		spare_ = r * std::sin(theta);
		has_spare_ = true;
		return r * std::cos(theta);
	}

	std::uint64_t counter() const { return counter_; }

private:
	std::uint64_t seed_;
	std::uint64_t counter_;
	double spare_ = 0;
	bool has_spare_ = false;
};

}  // namespace rnan

#endif  // RNAN_RANDOM_HPP_
