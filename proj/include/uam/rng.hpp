#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>

namespace uam
{
	/// splitmix64; also used to derive independent child seeds.
	class SplitMix64
	{
	public:
		using result_type = std::uint64_t;

		explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

		std::uint64_t operator()()
		{
			std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
			z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
			z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
			return z ^ (z >> 31);
		}

		static constexpr std::uint64_t min() { return 0; }
		static constexpr std::uint64_t max() { return std::numeric_limits<std::uint64_t>::max(); }

		/// Unbiased integer in [0, bound) (Lemire's multiply-shift with rejection).
		std::uint64_t bounded(std::uint64_t bound)
		{
			unsigned __int128 m = static_cast<unsigned __int128>((*this)()) * bound;
			auto low = static_cast<std::uint64_t>(m);
			if (low < bound) {
				const std::uint64_t threshold = -bound % bound;
				while (low < threshold) {
					m = static_cast<unsigned __int128>((*this)()) * bound;
					low = static_cast<std::uint64_t>(m);
				}
			}
			return static_cast<std::uint64_t>(m >> 64);
		}

		/// Uniform double in [0, 1) with 53 random bits.
		double uniform() { return double((*this)() >> 11) * 0x1.0p-53; }

		/// Standard normal via Box-Muller; platform independent.
		double normal()
		{
			if (has_spare_) {
				has_spare_ = false;
				return spare_;
			}
			double u1 = uniform();
			while (u1 <= 0.0)
				u1 = uniform();
			const double u2 = uniform();
			const double r = std::sqrt(-2.0 * std::log(u1));
			spare_ = r * std::sin(2 * std::numbers::pi * u2);
			has_spare_ = true;
			return r * std::cos(2 * std::numbers::pi * u2);
		}

		/// Circular complex Gaussian with E|z|^2 = variance.
		std::complex<double> complex_normal(double variance)
		{
			const double s = std::sqrt(variance / 2);
			const double re = normal();
			return {s * re, s * normal()};
		}

	private:
		std::uint64_t state_;
		bool has_spare_ = false;
		double spare_ = 0.0;
	};

	/// Child seed for (master, stream, index); distinct streams never collide in practice.
	inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index = 0)
	{
		SplitMix64 a(master ^ (stream * 0xD1B54A32D192ED03ULL));
		a();
		SplitMix64 b(a() ^ (index * 0x8CB92BA72F3D8DD7ULL));
		b();
		return b();
	}
} // namespace uam
