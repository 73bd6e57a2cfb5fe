#include "uam/probe.hpp"

#include "uam/dsp.hpp"
#include "uam/iq_file.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

namespace uam
{
	namespace
	{
		double median(std::vector<double> v)
		{
			if (v.empty())
				return 0.0;
			const auto mid = v.begin() + std::ptrdiff_t(v.size() / 2);
			std::nth_element(v.begin(), mid, v.end());
			return *mid;
		}

		/// Earliest sample reaching half of the row maximum, walked up to its local peak.
		Eigen::Index direct_path(const RVec &row)
		{
			const double top = row.maxCoeff();
			Eigen::Index i = 0;
			while (i < row.size() && row[i] < 0.5 * top)
				++i;
			while (i + 1 < row.size() && row[i + 1] > row[i])
				++i;
			return i;
		}
	} // namespace

	BasebandSignal pn_pulse(const MSequenceSpec &spec, double chip_rate)
	{
		return {bits_to_chips(generate_msequence(spec)), chip_rate};
	}

	BasebandSignal pulse_train(const BasebandSignal &pulse, double period, int count)
	{
		const auto p = static_cast<Eigen::Index>(std::llround(period * pulse.sample_rate));
		if (p < pulse.size())
			throw ParameterError("pulse_train: pulse longer than the period");
		if (count < 0)
			throw ParameterError("pulse_train: negative count");
		CVec out = CVec::Zero(p * count);
		for (int i = 0; i < count; ++i)
			out.segment(i * p, pulse.size()) = pulse.samples;
		return {out, pulse.sample_rate};
	}

	CirEstimate estimate_cir(const BasebandSignal &rx, const BasebandSignal &pn_template, double pulse_period)
	{
		if (rx.sample_rate != pn_template.sample_rate)
			throw ParameterError("estimate_cir: template rate differs from rx rate");
		if (pn_template.empty())
			throw ParameterError("estimate_cir: empty template");
		const double fs = rx.sample_rate;
		const auto P = static_cast<Eigen::Index>(std::llround(pulse_period * fs));
		if (pn_template.size() > P)
			throw ParameterError("estimate_cir: template longer than the pulse period");
		const Eigen::Index count = rx.size() / P;
		if (count < 1)
			throw ParameterError("estimate_cir: rx shorter than one pulse period");

		CirEstimate cir;
		cir.sample_rate = fs;
		cir.lags = RVec::LinSpaced(P, 0.0, double(P - 1) / fs);
		cir.times = RVec(count);
		cir.magnitude = Eigen::MatrixXd::Zero(count, P);
		cir.valid.assign(std::size_t(count), false);
		cir.peak = RVec::Zero(count);

		const CVec mf = matched_filter(rx.samples, pn_template.samples);
		const double noise_scale = std::sqrt(std::log(double(P)) / std::log(2.0));
		Eigen::Index reference = -1;
		for (Eigen::Index s = 0; s < count; ++s) {
			cir.times[s] = double(s * P) / fs;
			const RVec row = mf.segment(s * P, P).cwiseAbs();
			const double top = row.maxCoeff();
			cir.peak[s] = top;
			// Rayleigh noise: the expected maximum of P samples is about median * sqrt(ln P / ln 2).
			const double floor = median(std::vector<double>(row.data(), row.data() + row.size())) * noise_scale;
			if (!(top > 0) || top < 3 * floor)
				continue;
			const Eigen::Index anchor = direct_path(row);
			if (reference < 0)
				reference = anchor;
			const Eigen::Index shift = reference - anchor;
			for (Eigen::Index k = 0; k < P; ++k) {
				const Eigen::Index src = k - shift;
				if (src >= 0 && src < P)
					cir.magnitude(s, k) = row[src] / top;
			}
			cir.valid[std::size_t(s)] = true;
		}
		return cir;
	}

	std::vector<CirPeak> cir_peaks(const CirEstimate &cir, Eigen::Index snapshot, double threshold, Eigen::Index min_separation)
	{
		const RVec row = cir.magnitude.row(snapshot).transpose();
		std::vector<CirPeak> cand;
		const double top = row.size() ? row.maxCoeff() : 0.0;
		if (!(top > 0))
			return {};
		for (Eigen::Index k = 0; k < row.size(); ++k) {
			const double left = k > 0 ? row[k - 1] : -1.0, right = k + 1 < row.size() ? row[k + 1] : -1.0;
			if (row[k] >= threshold * top && row[k] >= left && row[k] > right)
				cand.push_back({k, cir.lags[k], row[k]});
		}
		// strongest first, suppress neighbours, then restore lag order
		std::sort(cand.begin(), cand.end(), [](const CirPeak &a, const CirPeak &b) { return a.magnitude > b.magnitude; });
		std::vector<CirPeak> kept;
		for (const CirPeak &p : cand) {
			const bool clear = std::none_of(kept.begin(), kept.end(),
			                                [&](const CirPeak &q) { return std::abs(q.index - p.index) < min_separation; });
			if (clear)
				kept.push_back(p);
		}
		std::sort(kept.begin(), kept.end(), [](const CirPeak &a, const CirPeak &b) { return a.index < b.index; });
		return kept;
	}

	FrequencyResponse measure_frequency_response(const BasebandSignal &rx, const LfmSpec &lfm, int repetitions,
	                                             double f_center, double f_low, double f_high)
	{
		if (repetitions < 1)
			throw ParameterError("measure_frequency_response: repetitions must be >= 1");
		const double fs = rx.sample_rate;
		const auto ns = static_cast<Eigen::Index>(std::llround(lfm.duration * fs));
		if (ns < 4)
			throw ParameterError("measure_frequency_response: LFM shorter than four samples");
		const Eigen::Index span = ns * repetitions;
		if (rx.size() < span)
			throw ParameterError("measure_frequency_response: rx does not span all repetitions");
		if (f_high <= f_low) {
			f_low = f_center + std::min(lfm.f_start, lfm.f_end);
			f_high = f_center + std::max(lfm.f_start, lfm.f_end);
		}

		RVec w(ns);
		for (Eigen::Index i = 0; i < ns; ++i)
			w[i] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * double(i) / double(ns));
		const double norm = fs * w.squaredNorm();

		RVec acc = RVec::Zero(ns);
		// four segments per repetition: Hann^2 sums to a constant at 75% overlap
		const int segments = 4 * repetitions;
		for (int q = 0; q < segments; ++q) {
			const Eigen::Index at = (q / 4) * ns + static_cast<Eigen::Index>(std::llround(double(q % 4) * double(ns) / 4.0));
			CVec seg(ns);
			for (Eigen::Index i = 0; i < ns; ++i)
				seg[i] = rx.samples[(at + i) % span] * w[i];
			acc += fft(seg).cwiseAbs2();
		}
		acc /= double(segments) * norm;

		std::vector<double> f, p;
		for (Eigen::Index j = 0; j < ns; ++j) {
			const Eigen::Index kk = j - ns / 2; // -ns/2 .. ns/2-1
			const double freq = f_center + double(kk) * fs / double(ns);
			if (freq < f_low - 1e-9 || freq > f_high + 1e-9)
				continue;
			f.push_back(freq);
			p.push_back(10 * std::log10(std::max(acc[(kk + ns) % ns], 1e-300)));
		}
		FrequencyResponse fr;
		fr.frequencies = Eigen::Map<RVec>(f.data(), Eigen::Index(f.size()));
		fr.power_db = Eigen::Map<RVec>(p.data(), Eigen::Index(p.size()));
		return fr;
	}

	void write_cir_csv(const std::filesystem::path &path, const CirEstimate &cir)
	{
		std::ofstream out(path, std::ios::trunc);
		if (!out)
			throw IoError("cannot open " + path.string() + " for writing");
		out << "time,lag,magnitude,valid\n";
		out.precision(10);
		for (Eigen::Index s = 0; s < cir.snapshots(); ++s)
			for (Eigen::Index k = 0; k < cir.lags.size(); ++k)
				out << cir.times[s] << ',' << cir.lags[k] << ',' << cir.magnitude(s, k) << ',' << int(cir.valid[std::size_t(s)]) << '\n';
	}

	void write_frequency_response_csv(const std::filesystem::path &path, const FrequencyResponse &fr)
	{
		std::ofstream out(path, std::ios::trunc);
		if (!out)
			throw IoError("cannot open " + path.string() + " for writing");
		out << "frequency,power_db\n";
		out.precision(10);
		for (Eigen::Index k = 0; k < fr.frequencies.size(); ++k)
			out << fr.frequencies[k] << ',' << fr.power_db[k] << '\n';
	}
} // namespace uam
