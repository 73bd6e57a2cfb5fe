#pragma once

#include "uam/signal.hpp"

#include <cstdint>

namespace uam
{
	/// Maximum-length LFSR parameters. `taps` holds every polynomial
	/// coefficient: bit i is the coefficient of x^i, so x^3 + x + 1 is 0b1011.
	struct MSequenceSpec
	{
		int degree = 9;
		std::uint32_t taps = 0;
		std::uint32_t seed = 1;

		/// Built-in primitive polynomial for degree 2..16 with seed 1.
		static MSequenceSpec standard(int degree);
	};

	/// Primitive polynomial mask from the built-in table (degrees 2..16).
	std::uint32_t default_primitive_taps(int degree);

	/// Algebraic check: x has multiplicative order 2^degree - 1 modulo the polynomial.
	bool is_primitive(std::uint32_t taps, int degree);

	/// One period (2^degree - 1 bits) of the m-sequence.
	Bits generate_msequence(const MSequenceSpec &spec);

	/// Antipodal chips: bit 0 -> +1, bit 1 -> -1.
	CVec bits_to_chips(const Bits &bits);

	struct LfmSpec
	{
		double f_start = 0.0;
		double f_end = 0.0;
		double duration = 0.0;
		double amplitude = 1.0;
	};

	/// Constant-envelope linear sweep f_start -> f_end, round(duration * fs) samples.
	BasebandSignal generate_lfm(const LfmSpec &spec, double sample_rate);
} // namespace uam
