#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace uam
{
	/// Raised for every violated precondition on a public operation.
	class ParameterError : public std::invalid_argument
	{
	public:
		explicit ParameterError(const std::string &what) : std::invalid_argument(what) {}
	};

	template <typename Scalar>
	using ComplexVector = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1>;

	template <typename Scalar>
	using RealVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

	using CVec = ComplexVector<double>;
	using RVec = RealVector<double>;
	using cplx = std::complex<double>;

	/// Uniformly sampled complex I/Q sequence. An empty signal is valid.
	template <typename Scalar>
	struct BasicBasebandSignal
	{
		ComplexVector<Scalar> samples;
		Scalar sample_rate;

		BasicBasebandSignal(ComplexVector<Scalar> s, Scalar rate) : samples(std::move(s)), sample_rate(rate)
		{
			if (!(sample_rate > 0))
				throw ParameterError("baseband sample_rate must be positive");
		}
		explicit BasicBasebandSignal(Scalar rate) : BasicBasebandSignal(ComplexVector<Scalar>(), rate) {}

		Eigen::Index size() const { return samples.size(); }
		bool empty() const { return samples.size() == 0; }
		Scalar duration() const { return Scalar(samples.size()) / sample_rate; }
		/// Mean power per sample; zero for an empty signal.
		Scalar mean_power() const { return empty() ? Scalar(0) : samples.squaredNorm() / Scalar(samples.size()); }
		/// Continuous-time energy estimate, sum |x|^2 / fs.
		Scalar energy() const { return samples.squaredNorm() / sample_rate; }
	};

	/// Uniformly sampled real passband sequence.
	template <typename Scalar>
	struct BasicPassbandSignal
	{
		RealVector<Scalar> samples;
		Scalar sample_rate;

		BasicPassbandSignal(RealVector<Scalar> s, Scalar rate) : samples(std::move(s)), sample_rate(rate)
		{
			if (!(sample_rate > 0))
				throw ParameterError("passband sample_rate must be positive");
		}
		explicit BasicPassbandSignal(Scalar rate) : BasicPassbandSignal(RealVector<Scalar>(), rate) {}

		Eigen::Index size() const { return samples.size(); }
		bool empty() const { return samples.size() == 0; }
		Scalar duration() const { return Scalar(samples.size()) / sample_rate; }
		Scalar mean_power() const { return empty() ? Scalar(0) : samples.squaredNorm() / Scalar(samples.size()); }
		Scalar energy() const { return samples.squaredNorm() / sample_rate; }
	};

	using BasebandSignal = BasicBasebandSignal<double>;
	using PassbandSignal = BasicPassbandSignal<double>;

	using Bits = std::vector<std::uint8_t>;
	using Bytes = std::vector<std::uint8_t>;

	/// MSB first.
	inline Bits bytes_to_bits(const Bytes &bytes)
	{
		Bits b;
		b.reserve(bytes.size() * 8);
		for (std::uint8_t v : bytes)
			for (int i = 7; i >= 0; --i)
				b.push_back(std::uint8_t((v >> i) & 1));
		return b;
	}

	/// MSB first; a trailing partial byte is dropped.
	inline Bytes bits_to_bytes(const Bits &bits)
	{
		Bytes out(bits.size() / 8, 0);
		for (std::size_t i = 0; i < out.size() * 8; ++i)
			out[i / 8] = std::uint8_t(out[i / 8] << 1 | (bits[i] & 1));
		return out;
	}

	inline double db_to_power(double db) { return std::pow(10.0, db / 10.0); }
	inline double power_to_db(double p) { return 10.0 * std::log10(p); }
} // namespace uam
