#pragma once

#include "uam/signal.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace uam
{
	inline Eigen::Index next_pow2(Eigen::Index n)
	{
		Eigen::Index p = 1;
		while (p < n)
			p <<= 1;
		return p;
	}

	template <typename Scalar>
	Eigen::FFT<Scalar> &fft_engine()
	{
		thread_local Eigen::FFT<Scalar> engine;
		return engine;
	}

	template <typename Scalar>
	ComplexVector<Scalar> fft(const ComplexVector<Scalar> &x)
	{
		ComplexVector<Scalar> out(x.size());
		if (x.size() > 0)
			fft_engine<Scalar>().fwd(out, x);
		return out;
	}

	/// Inverse transform including the 1/N scaling.
	template <typename Scalar>
	ComplexVector<Scalar> ifft(const ComplexVector<Scalar> &x)
	{
		ComplexVector<Scalar> out(x.size());
		if (x.size() > 0)
			fft_engine<Scalar>().inv(out, x);
		return out;
	}

	/// Full linear convolution, length na + nb - 1.
	template <typename Scalar>
	ComplexVector<Scalar> convolve(const ComplexVector<Scalar> &a, const ComplexVector<Scalar> &b)
	{
		if (a.size() == 0 || b.size() == 0)
			return ComplexVector<Scalar>();
		const Eigen::Index n = a.size() + b.size() - 1;
		if (a.size() * b.size() <= 4096) {
			ComplexVector<Scalar> out = ComplexVector<Scalar>::Zero(n);
			for (Eigen::Index i = 0; i < a.size(); ++i)
				for (Eigen::Index j = 0; j < b.size(); ++j)
					out[i + j] += a[i] * b[j];
			return out;
		}
		if (a.size() < b.size())
			return convolve(b, a);
		if (8 * b.size() < a.size()) {
			// Overlap-add with blocks sized to the short operand.
			const Eigen::Index nfft = std::max<Eigen::Index>(1024, next_pow2(4 * b.size()));
			const Eigen::Index step = nfft - b.size() + 1;
			ComplexVector<Scalar> pb = ComplexVector<Scalar>::Zero(nfft);
			pb.head(b.size()) = b;
			const ComplexVector<Scalar> B = fft(pb);
			ComplexVector<Scalar> out = ComplexVector<Scalar>::Zero(n), blk(nfft);
			for (Eigen::Index at = 0; at < a.size(); at += step) {
				const Eigen::Index len = std::min(step, a.size() - at);
				blk.setZero();
				blk.head(len) = a.segment(at, len);
				const ComplexVector<Scalar> y = ifft(ComplexVector<Scalar>(fft(blk).cwiseProduct(B)));
				const Eigen::Index keep = std::min(nfft, n - at);
				out.segment(at, keep) += y.head(keep);
			}
			return out;
		}
		const Eigen::Index nfft = next_pow2(n);
		ComplexVector<Scalar> pa = ComplexVector<Scalar>::Zero(nfft), pb = ComplexVector<Scalar>::Zero(nfft);
		pa.head(a.size()) = a;
		pb.head(b.size()) = b;
		ComplexVector<Scalar> prod = fft(pa).cwiseProduct(fft(pb));
		return ifft(prod).head(n);
	}

	/// Full linear cross-correlation c[l] = sum_n a[n + l] conj(b[n]) for
	/// l in [-(nb-1), na-1]; element i holds lag i - (nb - 1).
	template <typename Scalar>
	ComplexVector<Scalar> cross_correlate(const ComplexVector<Scalar> &a, const ComplexVector<Scalar> &b)
	{
		if (a.size() == 0 || b.size() == 0)
			return ComplexVector<Scalar>();
		ComplexVector<Scalar> rb = b.reverse().conjugate();
		return convolve(a, rb);
	}

	template <typename Scalar>
	ComplexVector<Scalar> cross_correlate(const BasicBasebandSignal<Scalar> &a, const BasicBasebandSignal<Scalar> &b)
	{
		if (a.sample_rate != b.sample_rate)
			throw ParameterError("cross_correlate: sample rates differ");
		return cross_correlate(a.samples, b.samples);
	}

	/// Correlation of `x` against `tmpl` for lags 0..x.size()-1 only
	/// (template start aligned with x[lag]).
	template <typename Scalar>
	ComplexVector<Scalar> matched_filter(const ComplexVector<Scalar> &x, const ComplexVector<Scalar> &tmpl)
	{
		if (x.size() == 0 || tmpl.size() == 0)
			return ComplexVector<Scalar>::Zero(x.size());
		ComplexVector<Scalar> full = cross_correlate(x, tmpl);
		return full.segment(tmpl.size() - 1, x.size());
	}

	// ---------------------------------------------------------------------
	// Windowed-sinc machinery

	inline double bessel_i0(double x) { return std::cyl_bessel_i(0.0, x); }

	/// Kaiser beta for a given stopband attenuation in dB.
	inline double kaiser_beta(double atten_db)
	{
		if (atten_db > 50)
			return 0.1102 * (atten_db - 8.7);
		if (atten_db >= 21)
			return 0.5842 * std::pow(atten_db - 21, 0.4) + 0.07886 * (atten_db - 21);
		return 0.0;
	}

	inline double kaiser_window(double x, double beta)
	{
		// x in [-1, 1]
		if (x <= -1.0 || x >= 1.0)
			return 0.0;
		return bessel_i0(beta * std::sqrt(1.0 - x * x)) / bessel_i0(beta);
	}

	/// Odd-length linear-phase lowpass. `cutoff` and `transition` are in
	/// cycles per sample; the -6 dB point sits at `cutoff`.
	inline RVec design_lowpass(double cutoff, double transition, double atten_db = 70.0)
	{
		if (!(cutoff > 0 && cutoff < 0.5) || !(transition > 0))
			throw ParameterError("design_lowpass: bad cutoff/transition");
		const double dw = 2 * std::numbers::pi * transition;
		int order = static_cast<int>(std::ceil((atten_db - 8.0) / (2.285 * dw)));
		if (order % 2)
			++order;
		const double beta = kaiser_beta(atten_db);
		RVec h(order + 1);
		const int mid = order / 2;
		for (int n = 0; n <= order; ++n) {
			const double t = n - mid;
			const double s = t == 0 ? 2 * cutoff : std::sin(2 * std::numbers::pi * cutoff * t) / (std::numbers::pi * t);
			h[n] = s * kaiser_window(t / (mid + 1.0), beta);
		}
		return h / h.sum();
	}

	/// Convolution with an odd-length filter, output aligned with the input
	/// (zero-phase for symmetric taps).
	template <typename Derived>
	Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> filter_same(const Eigen::MatrixBase<Derived> &x, const RVec &h)
	{
		using T = typename Derived::Scalar;
		const Eigen::Index n = x.size(), m = h.size(), mid = m / 2;
		Eigen::Matrix<T, Eigen::Dynamic, 1> out = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(n);
		for (Eigen::Index i = 0; i < n; ++i) {
			T acc(0);
			const Eigen::Index lo = std::max<Eigen::Index>(0, i + mid - (m - 1));
			const Eigen::Index hi = std::min<Eigen::Index>(n - 1, i + mid);
			for (Eigen::Index j = lo; j <= hi; ++j)
				acc += x[j] * h[i + mid - j];
			out[i] = acc;
		}
		return out;
	}

	/// Tabulated Kaiser-windowed sinc k(u) = sinc(u) w(u / half_width) on a
	/// fine grid in zero-crossing units. Shared by every interpolator.
	class SincTable
	{
	public:
		static constexpr int kOversample = 512;

		SincTable(int half_width, double beta) : half_width_(half_width), values_(half_width * kOversample + 2, 0.0)
		{
			for (std::size_t i = 0; i < values_.size(); ++i) {
				const double u = double(i) / kOversample;
				if (u >= half_width)
					continue;
				if (i % kOversample == 0 && i != 0)
					continue; // exact zero crossings
				const double s = i == 0 ? 1.0 : std::sin(std::numbers::pi * u) / (std::numbers::pi * u);
				values_[i] = s * kaiser_window(u / half_width, beta);
			}
		}

		int half_width() const { return half_width_; }

		double operator()(double u) const
		{
			u = std::abs(u) * kOversample;
			const auto i = static_cast<std::size_t>(u);
			if (i + 1 >= values_.size())
				return 0.0;
			const double f = u - double(i);
			return values_[i] + f * (values_[i + 1] - values_[i]);
		}

		/// 32 zero crossings per side, ~80 dB sidelobes: Doppler/fractional-delay grade.
		static const SincTable &precise()
		{
			static const SincTable t(32, 8.0);
			return t;
		}
		/// 24 zero crossings per side, ~65 dB stopband, transition below 10% of the band.
		static const SincTable &converter()
		{
			static const SincTable t(24, kaiser_beta(65.0));
			return t;
		}

	private:
		int half_width_;
		std::vector<double> values_;
	};

	/// Band-limited evaluation y[n] = x(t0 + n * step) for n < count, with
	/// a lowpass at `cutoff` cycles per input sample (<= 0.5). Samples
	/// outside the input are zero. Weights are renormalized to unit sum so
	/// DC passes exactly.
	template <typename T>
	Eigen::Matrix<T, Eigen::Dynamic, 1> sample_at(const Eigen::Matrix<T, Eigen::Dynamic, 1> &x, double t0, double step,
	                                              Eigen::Index count, double cutoff, const SincTable &kernel)
	{
		Eigen::Matrix<T, Eigen::Dynamic, 1> y = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(std::max<Eigen::Index>(count, 0));
		if (x.size() == 0)
			return y;
		cutoff = std::min(cutoff, 0.5);
		const double scale = 2.0 * cutoff; // u = (t - m) * scale
		const double reach = kernel.half_width() / scale;
		const Eigen::Index n_in = x.size();
		for (Eigen::Index n = 0; n < count; ++n) {
			const double t = t0 + double(n) * step;
			const double rounded = std::round(t);
			if (cutoff >= 0.5 && std::abs(t - rounded) < 1e-12) {
				const auto m = static_cast<Eigen::Index>(rounded);
				if (m >= 0 && m < n_in)
					y[n] = x[m];
				continue;
			}
			const auto lo = static_cast<Eigen::Index>(std::ceil(t - reach));
			const auto hi = static_cast<Eigen::Index>(std::floor(t + reach));
			if (hi < 0 || lo >= n_in)
				continue;
			T acc(0);
			double wall = 0.0;
			for (Eigen::Index m = lo; m <= hi; ++m) {
				const double w = kernel((t - double(m)) * scale);
				wall += w;
				if (m >= 0 && m < n_in)
					acc += x[m] * w;
			}
			if (wall != 0.0)
				y[n] = acc / wall;
		}
		return y;
	}

	/// Integer-plus-fractional delay by `delay` samples; output has `count` samples.
	template <typename T>
	Eigen::Matrix<T, Eigen::Dynamic, 1> fractional_delay(const Eigen::Matrix<T, Eigen::Dynamic, 1> &x, double delay, Eigen::Index count)
	{
		return sample_at(x, -delay, 1.0, count, 0.5, SincTable::precise());
	}

	/// Time-scale a signal: y[n] = x(n * factor) at the same sample rate, so
	/// duration shrinks by `factor` and a tone at f moves to f * factor.
	template <typename Scalar>
	BasicBasebandSignal<Scalar> resample(const BasicBasebandSignal<Scalar> &sig, double factor)
	{
		if (!(factor >= 0.9 && factor <= 1.1))
			throw ParameterError("resample: factor outside [0.9, 1.1]");
		if (sig.empty())
			throw ParameterError("resample: empty signal");
		const auto count = static_cast<Eigen::Index>(std::floor(double(sig.size() - 1) / factor)) + 1;
		const double cutoff = 0.5 * std::min(1.0, 1.0 / factor);
		return {sample_at<std::complex<Scalar>>(sig.samples, 0.0, factor, count, cutoff, SincTable::precise()), sig.sample_rate};
	}

	/// Sample-rate conversion of a baseband signal to an arbitrary new rate.
	template <typename Scalar>
	BasicBasebandSignal<Scalar> change_rate(const BasicBasebandSignal<Scalar> &sig, double new_rate,
	                                        const SincTable &kernel = SincTable::precise())
	{
		if (!(new_rate > 0))
			throw ParameterError("change_rate: rate must be positive");
		if (new_rate == sig.sample_rate)
			return sig;
		const double step = sig.sample_rate / new_rate;
		const auto count = static_cast<Eigen::Index>(std::llround(double(sig.size()) / step));
		return {sample_at<std::complex<Scalar>>(sig.samples, 0.0, step, count, 0.5 * std::min(1.0, 1.0 / step), kernel),
		        static_cast<Scalar>(new_rate)};
	}

	/// exp(j 2 pi f n / fs) with the phase reduced modulo one cycle.
	inline cplx oscillator(double f, double fs, Eigen::Index n)
	{
		double cycles = f * double(n) / fs;
		cycles -= std::floor(cycles);
		return std::polar(1.0, 2 * std::numbers::pi * cycles);
	}

	/// Interpolate to `out_rate` and mix to `f_center`; output is the real part.
	template <typename Scalar>
	BasicPassbandSignal<Scalar> digital_up_convert(const BasicBasebandSignal<Scalar> &bb, double f_center, double out_rate)
	{
		const double half = bb.sample_rate / 2;
		if (!(out_rate >= 2 * (f_center + half)))
			throw ParameterError("digital_up_convert: out_rate violates Nyquist");
		if (!(f_center > half))
			throw ParameterError("digital_up_convert: f_center must exceed half the baseband rate");
		if (bb.empty())
			return BasicPassbandSignal<Scalar>(static_cast<Scalar>(out_rate));
		const double step = bb.sample_rate / out_rate;
		const auto count = static_cast<Eigen::Index>(std::llround(double(bb.size()) / step));
		ComplexVector<Scalar> up = sample_at<std::complex<Scalar>>(bb.samples, 0.0, step, count, 0.5, SincTable::converter());
		RealVector<Scalar> out(count);
		for (Eigen::Index n = 0; n < count; ++n)
			out[n] = static_cast<Scalar>((std::complex<double>(up[n]) * oscillator(f_center, out_rate, n)).real());
		return {std::move(out), static_cast<Scalar>(out_rate)};
	}

	/// DC-block the passband input, mix f_center to 0 Hz, lowpass and
	/// decimate to bb_rate. A carrier A cos(2 pi fc t) maps to A/2.
	template <typename Scalar>
	BasicBasebandSignal<Scalar> digital_down_convert(const BasicPassbandSignal<Scalar> &pb, double f_center, double bb_rate)
	{
		if (!(bb_rate > 0 && bb_rate <= pb.sample_rate))
			throw ParameterError("digital_down_convert: bb_rate must be in (0, passband rate]");
		if (!(f_center > 0 && f_center < pb.sample_rate / 2))
			throw ParameterError("digital_down_convert: f_center outside (0, fs/2)");
		if (pb.empty())
			return BasicBasebandSignal<Scalar>(static_cast<Scalar>(bb_rate));
		const Eigen::Index n = pb.size();
		// single-pole DC block, corner at 0.1% of the baseband rate
		const double a = 1.0 / (1.0 + 2 * std::numbers::pi * 0.001 * bb_rate / pb.sample_rate);
		ComplexVector<Scalar> mixed(n);
		double prev_x = 0, prev_y = 0;
		for (Eigen::Index i = 0; i < n; ++i) {
			const double x = pb.samples[i];
			const double y = a * (prev_y + x - prev_x);
			prev_x = x;
			prev_y = y;
			mixed[i] = std::complex<Scalar>(y * std::conj(oscillator(f_center, pb.sample_rate, i)));
		}
		const double step = pb.sample_rate / bb_rate;
		const auto count = static_cast<Eigen::Index>(std::floor(double(n) / step));
		return {sample_at<std::complex<Scalar>>(mixed, 0.0, step, count, 0.5 / step, SincTable::converter()),
		        static_cast<Scalar>(bb_rate)};
	}

	/// Analytic signal x + j H{x} via FFT.
	template <typename Scalar>
	ComplexVector<Scalar> analytic_signal(const RealVector<Scalar> &x)
	{
		const Eigen::Index n = x.size();
		if (n == 0)
			return ComplexVector<Scalar>();
		ComplexVector<Scalar> spec = fft<Scalar>(x.template cast<std::complex<Scalar>>());
		for (Eigen::Index k = 1; k < n; ++k) {
			if (2 * k < n)
				spec[k] *= Scalar(2);
			else if (2 * k > n)
				spec[k] = 0;
		}
		return ifft(spec);
	}
} // namespace uam

namespace uam
{
	/// Sub-sample location of the magnitude peak of a band-limited sequence
	/// near integer index `i`, by golden-section search on the windowed-sinc
	/// interpolant over [i - 1, i + 1].
	template <typename Scalar>
	double refine_peak(const ComplexVector<Scalar> &c, Eigen::Index i)
	{
		const Eigen::Index half = SincTable::precise().half_width() + 2;
		const Eigen::Index lo = std::max<Eigen::Index>(0, i - half), hi = std::min<Eigen::Index>(c.size(), i + half + 1);
		if (hi - lo < 3)
			return double(i);
		const ComplexVector<Scalar> w = c.segment(lo, hi - lo);
		auto mag = [&](double t) {
			return std::abs(sample_at<std::complex<Scalar>>(w, t - double(lo), 1.0, 1, 0.5, SincTable::precise())[0]);
		};
		constexpr double g = 0.6180339887498949;
		double a = double(i) - 1.0, b = double(i) + 1.0;
		double x1 = b - g * (b - a), x2 = a + g * (b - a);
		double f1 = mag(x1), f2 = mag(x2);
		for (int it = 0; it < 40; ++it) {
			if (f1 < f2) {
				a = x1;
				x1 = x2;
				f1 = f2;
				x2 = a + g * (b - a);
				f2 = mag(x2);
			} else {
				b = x2;
				x2 = x1;
				f2 = f1;
				x1 = b - g * (b - a);
				f1 = mag(x1);
			}
		}
		return 0.5 * (a + b);
	}
} // namespace uam
