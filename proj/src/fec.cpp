#include "uam/fec.hpp"

#include "uam/rng.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <string>

namespace uam
{
	void ConvCodeSpec::validate() const
	{
		if (constraint_length < 2 || constraint_length > 16)
			throw ParameterError("conv code: constraint_length must be in 2..16");
		for (auto g : generators)
			if (std::bit_width(g) != unsigned(constraint_length))
				throw ParameterError("conv code: generator " + std::to_string(g) + " does not have constraint_length significant bits");
	}

	std::size_t ConvCodeSpec::coded_length(std::size_t info_bits) const
	{
		return 2 * (info_bits + (terminated ? std::size_t(memory()) : 0));
	}

	std::size_t ConvCodeSpec::info_length(std::size_t coded_bits) const
	{
		const std::size_t steps = coded_bits / 2, tail = terminated ? std::size_t(memory()) : 0;
		return steps > tail ? steps - tail : 0;
	}

	Bits conv_encode(const Bits &bits, const ConvCodeSpec &spec)
	{
		spec.validate();
		const int m = spec.memory();
		const std::size_t steps = bits.size() + (spec.terminated ? std::size_t(m) : 0);
		Bits out;
		out.reserve(2 * steps);
		std::uint32_t state = 0;
		for (std::size_t t = 0; t < steps; ++t) {
			const std::uint32_t u = t < bits.size() ? (bits[t] & 1u) : 0u;
			const std::uint32_t reg = (u << m) | state;
			out.push_back(std::uint8_t(std::popcount(reg & spec.generators[0]) & 1));
			out.push_back(std::uint8_t(std::popcount(reg & spec.generators[1]) & 1));
			state = reg >> 1;
		}
		return out;
	}

	RVec hard_to_llr(const Bits &bits)
	{
		RVec l(static_cast<Eigen::Index>(bits.size()));
		for (std::size_t i = 0; i < bits.size(); ++i)
			l[Eigen::Index(i)] = bits[i] ? -1.0 : 1.0;
		return l;
	}

	ViterbiDecoder::ViterbiDecoder(const ConvCodeSpec &spec) : spec_(spec)
	{
		spec_.validate();
		const int m = spec_.memory();
		n_states_ = 1 << m;
		out_sym_.resize(std::size_t(n_states_) * 2);
		for (int ns = 0; ns < n_states_; ++ns) {
			const std::uint32_t u = std::uint32_t(ns) >> (m - 1);
			for (std::uint32_t b = 0; b < 2; ++b) {
				const std::uint32_t prev = ((std::uint32_t(ns) << 1) & std::uint32_t(n_states_ - 1)) | b;
				const std::uint32_t reg = (u << m) | prev;
				const auto o0 = std::uint8_t(std::popcount(reg & spec_.generators[0]) & 1);
				const auto o1 = std::uint8_t(std::popcount(reg & spec_.generators[1]) & 1);
				out_sym_[std::size_t(ns) * 2 + b] = std::uint8_t(o0 << 1 | o1);
			}
		}
		metric_.resize(std::size_t(n_states_));
		next_metric_.resize(std::size_t(n_states_));
	}

	Bits ViterbiDecoder::decode(const RVec &llr)
	{
		if (llr.size() % 2)
			throw ParameterError("viterbi_decode: odd number of soft bits");
		const int m = spec_.memory();
		const auto steps = std::size_t(llr.size() / 2);
		const std::size_t tail = spec_.terminated ? std::size_t(m) : 0;
		if (spec_.terminated && steps < tail && steps != 0)
			throw ParameterError("viterbi_decode: input shorter than the termination tail");
		if (steps == 0)
			return {};

		const std::size_t words = std::max<std::size_t>(1, std::size_t(n_states_) / 64);
		decisions_.assign(steps * words, 0);
		constexpr float neg_inf = -1e30f;
		std::fill(metric_.begin(), metric_.end(), neg_inf);
		metric_[0] = 0.0;

		const std::uint32_t mask = std::uint32_t(n_states_ - 1);
		const int half = n_states_ / 2;
		std::vector<std::uint8_t> dec_bytes(static_cast<std::size_t>(n_states_), 0);
		for (std::size_t t = 0; t < steps; ++t) {
			const float l0 = float(llr[Eigen::Index(2 * t)]), l1 = float(llr[Eigen::Index(2 * t + 1)]);
			// correlation metric of each output pair (bit 0 -> +llr/2)
			const float bm[4] = {0.5f * (l0 + l1), 0.5f * (l0 - l1), 0.5f * (-l0 + l1), 0.5f * (-l0 - l1)};
			// butterfly: predecessors 2j, 2j+1 feed successors j (u=0) and j+half (u=1)
			for (int j = 0; j < half; ++j) {
				const float a = metric_[std::size_t(2 * j)], b = metric_[std::size_t(2 * j + 1)];
				const std::uint8_t *o = &out_sym_[std::size_t(j) * 2];
				const std::uint8_t *oh = &out_sym_[std::size_t(j + half) * 2];
				const float c0 = a + bm[o[0]], c1 = b + bm[o[1]];
				const float h0 = a + bm[oh[0]], h1 = b + bm[oh[1]];
				const bool s0 = c1 > c0, s1 = h1 > h0;
				next_metric_[std::size_t(j)] = s0 ? c1 : c0;
				next_metric_[std::size_t(j + half)] = s1 ? h1 : h0;
				dec_bytes[std::size_t(j)] = s0;
				dec_bytes[std::size_t(j + half)] = s1;
			}
			std::uint64_t *dec = &decisions_[t * words];
			for (int ns = 0; ns < n_states_; ++ns)
				dec[std::size_t(ns) >> 6] |= std::uint64_t(dec_bytes[std::size_t(ns)]) << (ns & 63);
			std::swap(metric_, next_metric_);
			// keep float metrics well inside their precision
			if ((t & 255) == 255) {
				const float top = *std::max_element(metric_.begin(), metric_.end());
				for (auto &v : metric_)
					v -= top;
			}
		}

		std::uint32_t state = 0;
		if (!spec_.terminated)
			state = std::uint32_t(std::max_element(metric_.begin(), metric_.end()) - metric_.begin());
		Bits info(steps);
		for (std::size_t t = steps; t-- > 0;) {
			info[t] = std::uint8_t(state >> (m - 1));
			const std::uint32_t b = std::uint32_t(decisions_[t * words + (state >> 6)] >> (state & 63)) & 1u;
			state = ((state << 1) & mask) | b;
		}
		info.resize(steps - tail);
		return info;
	}

	Bits viterbi_decode(const RVec &llr, const ConvCodeSpec &spec)
	{
		ViterbiDecoder dec(spec);
		return dec.decode(llr);
	}

	Interleaver::Interleaver(const InterleaverSpec &spec) : perm_(spec.length)
	{
		for (std::size_t i = 0; i < perm_.size(); ++i)
			perm_[i] = i;
		SplitMix64 rng(spec.seed);
		for (std::size_t i = perm_.size(); i > 1; --i) {
			const auto j = std::size_t(rng.bounded(i));
			std::swap(perm_[i - 1], perm_[j]);
		}
	}

	void Interleaver::check(std::size_t n) const
	{
		if (n != perm_.size())
			throw ParameterError("interleaver: length " + std::to_string(n) + " != " + std::to_string(perm_.size()));
	}
} // namespace uam
