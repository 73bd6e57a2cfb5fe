#pragma once

#include "uam/signal.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace uam
{
	/// Rate-1/2 feed-forward convolutional code. Generator masks are read
	/// MSB-first: bit (K-1) taps the current input, bit 0 the oldest.
	struct ConvCodeSpec
	{
		int constraint_length = 12;
		std::array<std::uint32_t, 2> generators{04335, 05723};
		bool terminated = true;

		void validate() const;
		int memory() const { return constraint_length - 1; }
		/// Coded length for `info_bits` payload bits, tail included.
		std::size_t coded_length(std::size_t info_bits) const;
		/// Payload bits carried by `coded_bits` encoder outputs.
		std::size_t info_length(std::size_t coded_bits) const;
	};

	Bits conv_encode(const Bits &bits, const ConvCodeSpec &spec = {});

	/// Hard bits to LLRs: 0 -> +1, 1 -> -1. Positive LLR favours 0.
	RVec hard_to_llr(const Bits &bits);

	/// Soft-input Viterbi decoder with full-sequence traceback. Holds its
	/// trellis scratch, so one instance per thread.
	class ViterbiDecoder
	{
	public:
		explicit ViterbiDecoder(const ConvCodeSpec &spec = {});

		/// LLR per coded bit (positive = 0). Returns the payload without tail.
		Bits decode(const RVec &llr);

		const ConvCodeSpec &spec() const { return spec_; }

	private:
		ConvCodeSpec spec_;
		int n_states_;
		std::vector<std::uint8_t> out_sym_; // per (next state, predecessor bit): 2-bit output
		std::vector<float> metric_, next_metric_;
		std::vector<std::uint64_t> decisions_;
	};

	Bits viterbi_decode(const RVec &llr, const ConvCodeSpec &spec = {});

	struct InterleaverSpec
	{
		std::size_t length = 0;
		std::uint64_t seed = 0;
	};

	/// Fisher-Yates permutation drawn from SplitMix64(seed). out[i] = in[perm[i]].
	class Interleaver
	{
	public:
		explicit Interleaver(const InterleaverSpec &spec);

		const std::vector<std::size_t> &permutation() const { return perm_; }
		std::size_t length() const { return perm_.size(); }

		template <typename Seq>
		Seq interleave(const Seq &in) const
		{
			check(std::size_t(in.size()));
			Seq out = in;
			for (std::size_t i = 0; i < perm_.size(); ++i)
				out[i] = in[perm_[i]];
			return out;
		}

		template <typename Seq>
		Seq deinterleave(const Seq &in) const
		{
			check(std::size_t(in.size()));
			Seq out = in;
			for (std::size_t i = 0; i < perm_.size(); ++i)
				out[perm_[i]] = in[i];
			return out;
		}

	private:
		void check(std::size_t n) const;
		std::vector<std::size_t> perm_;
	};

	inline Bits interleave(const Bits &bits, const InterleaverSpec &spec) { return Interleaver(spec).interleave(bits); }
	inline Bits deinterleave(const Bits &bits, const InterleaverSpec &spec) { return Interleaver(spec).deinterleave(bits); }
} // namespace uam
