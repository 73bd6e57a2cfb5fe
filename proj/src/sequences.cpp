#include "uam/sequences.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <numbers>

namespace uam
{
	namespace
	{
		// x^d + ... + 1, full coefficient masks
		constexpr std::array<std::uint32_t, 17> kPrimitive = {
		    0, 0,
		    0b111,                  // 2: x^2 + x + 1
		    0b1011,                 // 3: x^3 + x + 1
		    0b10011,                // 4: x^4 + x + 1
		    0b100101,               // 5: x^5 + x^2 + 1
		    0b1000011,              // 6: x^6 + x + 1
		    0b10000011,             // 7: x^7 + x + 1
		    0b100011101,            // 8: x^8 + x^4 + x^3 + x^2 + 1
		    0b1000100001,           // 9: x^9 + x^5 + 1
		    0b10000001001,          // 10: x^10 + x^3 + 1
		    0b100000000101,         // 11: x^11 + x^2 + 1
		    0b1000001010011,        // 12: x^12 + x^6 + x^4 + x + 1
		    0b10000000011011,       // 13: x^13 + x^4 + x^3 + x + 1
		    0b100010001000011,      // 14: x^14 + x^10 + x^6 + x + 1
		    0b1000000000000011,     // 15: x^15 + x + 1
		    0b10001000000001011,    // 16: x^16 + x^12 + x^3 + x + 1
		};

		// a * b mod p over GF(2), deg p = d <= 31
		std::uint64_t mulmod(std::uint64_t a, std::uint64_t b, std::uint64_t p, int d)
		{
			std::uint64_t r = 0;
			while (b) {
				if (b & 1)
					r ^= a;
				b >>= 1;
				a <<= 1;
				if (a >> d & 1)
					a ^= p;
			}
			return r;
		}

		std::uint64_t powmod_x(std::uint64_t e, std::uint64_t p, int d)
		{
			std::uint64_t result = 1, base = 2; // x, already reduced for deg p >= 2
			while (e) {
				if (e & 1)
					result = mulmod(result, base, p, d);
				base = mulmod(base, base, p, d);
				e >>= 1;
			}
			return result;
		}
	} // namespace

	std::uint32_t default_primitive_taps(int degree)
	{
		if (degree < 2 || degree > 16)
			throw ParameterError("no built-in primitive polynomial for degree " + std::to_string(degree));
		return kPrimitive[degree];
	}

	MSequenceSpec MSequenceSpec::standard(int degree) { return {degree, default_primitive_taps(degree), 1u}; }

	bool is_primitive(std::uint32_t taps, int degree)
	{
		if (degree < 2 || degree > 31)
			return false;
		const std::uint64_t p = taps;
		if ((p >> degree) != 1 || !(p & 1))
			return false;
		const std::uint64_t order = (std::uint64_t(1) << degree) - 1;
		if (powmod_x(order, p, degree) != 1)
			return false;
		std::uint64_t n = order;
		for (std::uint64_t q = 2; q * q <= n; ++q) {
			if (n % q)
				continue;
			if (powmod_x(order / q, p, degree) == 1)
				return false;
			while (n % q == 0)
				n /= q;
		}
		if (n > 1 && powmod_x(order / n, p, degree) == 1)
			return false;
		return true;
	}

	Bits generate_msequence(const MSequenceSpec &spec)
	{
		const int d = spec.degree;
		if (d < 2 || d > 31)
			throw ParameterError("m-sequence degree must be in 2..31");
		if (spec.seed == 0 || (d < 32 && (spec.seed >> d) != 0))
			throw ParameterError("m-sequence seed must be a nonzero " + std::to_string(d) + "-bit state");
		if (!is_primitive(spec.taps, d))
			throw ParameterError("m-sequence taps are not a primitive polynomial of degree " + std::to_string(d));

		const std::size_t period = (std::size_t(1) << d) - 1;
		Bits out(period);
		// window holds s[n .. n+d-1], s[n] in bit 0
		std::uint32_t window = spec.seed;
		const std::uint32_t feedback = spec.taps & ((d == 32) ? 0xffffffffu : ((1u << d) - 1));
		for (std::size_t n = 0; n < period; ++n) {
			out[n] = window & 1u;
			const std::uint32_t next = static_cast<std::uint32_t>(std::popcount(window & feedback) & 1);
			window = (window >> 1) | (next << (d - 1));
		}
		return out;
	}

	CVec bits_to_chips(const Bits &bits)
	{
		CVec chips(static_cast<Eigen::Index>(bits.size()));
		for (std::size_t i = 0; i < bits.size(); ++i)
			chips[static_cast<Eigen::Index>(i)] = bits[i] ? -1.0 : 1.0;
		return chips;
	}

	BasebandSignal generate_lfm(const LfmSpec &spec, double sample_rate)
	{
		if (!(spec.duration > 0))
			throw ParameterError("LFM duration must be positive");
		if (!(sample_rate > 0))
			throw ParameterError("LFM sample rate must be positive");
		if (std::abs(spec.f_start) > sample_rate / 2 || std::abs(spec.f_end) > sample_rate / 2)
			throw ParameterError("LFM sweep exceeds the Nyquist band");
		const auto n = static_cast<Eigen::Index>(std::llround(spec.duration * sample_rate));
		const double k = (spec.f_end - spec.f_start) / spec.duration;
		CVec s(n);
		for (Eigen::Index i = 0; i < n; ++i) {
			const double t = double(i) / sample_rate;
			double cycles = spec.f_start * t + 0.5 * k * t * t;
			cycles -= std::floor(cycles);
			s[i] = std::polar(spec.amplitude, 2 * std::numbers::pi * cycles);
		}
		return {std::move(s), sample_rate};
	}
} // namespace uam
