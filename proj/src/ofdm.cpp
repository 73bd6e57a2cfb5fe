#include "uam/ofdm.hpp"

#include "uam/dsp.hpp"
#include "uam/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace uam
{
	using std::numbers::pi;

	PreambleSpec PreambleSpec::pn_autocorr(int degree) { return {PreambleKind::PnAutocorr, MSequenceSpec::standard(degree)}; }
	PreambleSpec PreambleSpec::mseq_xcorr(int degree) { return {PreambleKind::MseqXcorr, MSequenceSpec::standard(degree)}; }

	SubcarrierMap default_subcarrier_map(int n)
	{
		if (n < 128)
			throw ParameterError("default_subcarrier_map: need at least 128 subcarriers");
		SubcarrierMap m(std::size_t(n), SubcarrierRole::Data);
		for (int k = 0; k < n; ++k) {
			if (k < 32 || k >= n - 32)
				m[std::size_t(k)] = SubcarrierRole::Null;
			else if (k % 64 == 0)
				m[std::size_t(k)] = SubcarrierRole::Pilot;
		}
		return m;
	}

	SubcarrierMap high_rate_subcarrier_map()
	{
		SubcarrierMap m(8192, SubcarrierRole::Data);
		for (int k = 0; k < 32; ++k) {
			m[std::size_t(k)] = SubcarrierRole::Null;
			m[std::size_t(8191 - k)] = SubcarrierRole::Null;
		}
		for (int j = 0; j < 64; ++j)
			m[std::size_t(32 + 127 * j)] = SubcarrierRole::Pilot;
		return m;
	}

	void OfdmConfig::validate() const
	{
		if (n_subcarriers < 2)
			throw ParameterError("ofdm: n_subcarriers must be >= 2");
		if (!(bandwidth > 0))
			throw ParameterError("ofdm: bandwidth must be positive");
		if (!(f_center >= 0))
			throw ParameterError("ofdm: f_center must be non-negative");
		if (!(guard_time >= 0) || !(preamble_guard_time >= 0) || !(inter_frame_gap >= 0) || !(fold_time >= 0))
			throw ParameterError("ofdm: guard and gap times must be non-negative");
		if (blocks_per_frame < 1)
			throw ParameterError("ofdm: blocks_per_frame must be >= 1");
		if (subcarrier_map.size() != std::size_t(n_subcarriers))
			throw ParameterError("ofdm: subcarrier_map size != n_subcarriers");
		if (!(tx_gain > 0))
			throw ParameterError("ofdm: tx_gain must be positive");
		if (!(doppler_min > 0 && doppler_min <= 1 && doppler_max >= 1 && doppler_max <= 1.1 && doppler_min >= 0.9))
			throw ParameterError("ofdm: doppler window must bracket 1 inside [0.9, 1.1]");
		if (!(detection_threshold > 0 && detection_threshold < 1))
			throw ParameterError("ofdm: detection_threshold must be in (0, 1)");
		if (timing_backoff < 0)
			throw ParameterError("ofdm: timing_backoff must be >= 0");
		if (preamble.sequence.degree < 2 || preamble.sequence.degree > 16)
			throw ParameterError("ofdm: preamble sequence degree must be in 2..16");
	}

	Eigen::Index OfdmConfig::guard_samples() const { return Eigen::Index(std::llround(guard_time * bandwidth)); }
	Eigen::Index OfdmConfig::preamble_guard_samples() const { return Eigen::Index(std::llround(preamble_guard_time * bandwidth)); }
	Eigen::Index OfdmConfig::fold_samples() const
	{
		return std::min(guard_samples(), Eigen::Index(std::llround(fold_time * bandwidth)));
	}

	Eigen::Index OfdmConfig::preamble_samples() const
	{
		const Eigen::Index period = (Eigen::Index(1) << preamble.sequence.degree) - 1;
		return preamble.kind == PreambleKind::PnAutocorr ? 2 * period : period;
	}

	Eigen::Index OfdmConfig::frame_samples() const
	{
		return preamble_samples() + preamble_guard_samples() + Eigen::Index(blocks_per_frame) * block_stride();
	}

	std::vector<int> OfdmConfig::data_indices() const
	{
		std::vector<int> out;
		for (int k = 0; k < int(subcarrier_map.size()); ++k)
			if (subcarrier_map[std::size_t(k)] == SubcarrierRole::Data)
				out.push_back(k);
		return out;
	}

	std::vector<int> OfdmConfig::pilot_indices() const
	{
		std::vector<int> out;
		for (int k = 0; k < int(subcarrier_map.size()); ++k)
			if (subcarrier_map[std::size_t(k)] == SubcarrierRole::Pilot)
				out.push_back(k);
		return out;
	}

	int OfdmConfig::count(SubcarrierRole role) const
	{
		return int(std::count(subcarrier_map.begin(), subcarrier_map.end(), role));
	}

	std::size_t OfdmConfig::payload_bits() const
	{
		return std::size_t(blocks_per_frame) * std::size_t(count(SubcarrierRole::Data)) * std::size_t(bits_per_symbol());
	}

	namespace
	{
		OfdmConfig marina(double bw, double guard, Modulation mod)
		{
			OfdmConfig c;
			c.bandwidth = bw;
			c.f_center = 100e3;
			c.guard_time = guard;
			c.preamble_guard_time = guard;
			c.modulation = mod;
			c.preamble = PreambleSpec::pn_autocorr(10);
			return c;
		}
	} // namespace

	// Guards follow from T_blk / (T_blk + T_guard) = 0.576 with 8192-sample blocks.
	OfdmConfig OfdmConfig::marina_50k_dbpsk() { return marina(50e3, 120.6e-3, Modulation::DBPSK); }
	OfdmConfig OfdmConfig::marina_100k_dbpsk() { return marina(100e3, 60.3e-3, Modulation::DBPSK); }
	OfdmConfig OfdmConfig::marina_100k_dqpsk() { return marina(100e3, 60.3e-3, Modulation::DQPSK); }

	OfdmConfig OfdmConfig::high_rate()
	{
		OfdmConfig c;
		c.bandwidth = 208.33e3;
		c.f_center = 150e3;
		c.guard_time = 10e-3;
		c.preamble_guard_time = 0.0;
		c.modulation = Modulation::DQPSK;
		c.subcarrier_map = high_rate_subcarrier_map();
		c.preamble = PreambleSpec::mseq_xcorr(9);
		// one m-sequence per frame cannot resolve scale, so the search is pinned
		c.doppler_min = c.doppler_max = 1.0;
		c.inter_frame_gap = 209.7e-3 - c.frame_duration();
		return c;
	}

	std::string to_string(Modulation m) { return m == Modulation::DQPSK ? "DQPSK" : "DBPSK"; }
	std::string to_string(PreambleKind k) { return k == PreambleKind::MseqXcorr ? "MSEQ_XCORR" : "PN_AUTOCORR"; }

	double compute_data_rate(const OfdmConfig &config, double fec_rate)
	{
		config.validate();
		if (!(fec_rate > 0 && fec_rate <= 1))
			throw ParameterError("compute_data_rate: fec_rate must be in (0, 1]");
		return double(config.payload_bits()) * fec_rate / config.frame_period();
	}

	// ---------------------------------------------------------------- detection

	namespace
	{
		CVec preamble_segment(const OfdmConfig &c) { return bits_to_chips(generate_msequence(c.preamble.sequence)); }

		RVec energy_prefix(const CVec &x)
		{
			RVec e(x.size() + 1);
			e[0] = 0;
			for (Eigen::Index i = 0; i < x.size(); ++i)
				e[i + 1] = e[i] + std::norm(x[i]);
			return e;
		}

		// Normalized sliding autocorrelation, maximized over the segment
		// spacings a Doppler scale in [dmin, dmax] can produce.
		RVec autocorr_metric(const CVec &x, Eigen::Index L, double dmin, double dmax, std::vector<int> *lag_out = nullptr)
		{
			const auto lag_lo = Eigen::Index(std::floor(double(L) / dmax)), lag_hi = Eigen::Index(std::ceil(double(L) / dmin));
			const Eigen::Index n = x.size() - 2 * lag_hi + 1;
			if (n <= 0)
				return RVec();
			const RVec e = energy_prefix(x);
			RVec m = RVec::Zero(n);
			if (lag_out)
				lag_out->assign(std::size_t(n), int(L));
			for (Eigen::Index lag = lag_lo; lag <= lag_hi; ++lag) {
				cplx p(0);
				for (Eigen::Index i = 0; i < lag; ++i)
					p += x[i + lag] * std::conj(x[i]);
				for (Eigen::Index d = 0; d < n; ++d) {
					const double r = 0.5 * (e[d + 2 * lag] - e[d]);
					const double v = r > 1e-300 ? std::norm(p) / (r * r) : 0.0;
					if (v > m[d]) {
						m[d] = v;
						if (lag_out)
							(*lag_out)[std::size_t(d)] = int(lag);
					}
					if (d + 1 < n)
						p += x[d + 2 * lag] * std::conj(x[d + lag]) - x[d + lag] * std::conj(x[d]);
				}
			}
			m = m.cwiseSqrt();
			return m;
		}

		RVec xcorr_metric(const CVec &x, const CVec &tmpl, CVec *raw = nullptr)
		{
			const Eigen::Index L = tmpl.size(), n = x.size() - L + 1;
			if (n <= 0)
				return RVec();
			const CVec c = matched_filter(x, tmpl);
			const RVec e = energy_prefix(x);
			const double tn = tmpl.norm();
			RVec m(n);
			for (Eigen::Index d = 0; d < n; ++d) {
				const double w = e[d + L] - e[d];
				m[d] = w > 1e-300 ? std::abs(c[d]) / (tn * std::sqrt(w)) : 0.0;
			}
			if (raw)
				*raw = c;
			return m;
		}

		// Strongest peak of `tmpl` with lag in [lo, hi], refined to a fraction
		// of a sample. The template is split into ~128-chip pieces whose
		// correlations add in power, so a carrier offset of up to a few
		// percent of the chip rate over the whole template costs little.
		double mf_peak(const CVec &x, const CVec &tmpl, Eigen::Index lo, Eigen::Index hi)
		{
			lo = std::max<Eigen::Index>(0, lo);
			hi = std::min<Eigen::Index>(x.size() - tmpl.size(), hi);
			if (hi < lo)
				return -1.0;
			const Eigen::Index L = tmpl.size();
			const Eigen::Index Q = std::max<Eigen::Index>(1, L / 128), piece = L / Q;
			// band-limit the template so the correlation interpolates cleanly
			static const RVec lp = design_lowpass(0.42, 0.08, 80.0);
			const CVec tb = filter_same(tmpl, lp);
			const Eigen::Index pad = SincTable::precise().half_width() + 4;
			const Eigen::Index s = std::max<Eigen::Index>(0, lo - pad);
			const Eigen::Index e = std::min<Eigen::Index>(x.size(), hi + L + pad);
			const CVec seg = x.segment(s, e - s);
			std::vector<CVec> parts;
			for (Eigen::Index q = 0; q < Q; ++q) {
				const Eigen::Index len = q + 1 == Q ? L - q * piece : piece;
				parts.push_back(matched_filter(seg, CVec(tb.segment(q * piece, len))));
			}
			auto power_at = [&](Eigen::Index i) {
				double acc = 0;
				for (Eigen::Index q = 0; q < Q; ++q) {
					const Eigen::Index j = i + q * piece;
					if (j >= 0 && j < parts[std::size_t(q)].size())
						acc += std::norm(parts[std::size_t(q)][j]);
				}
				return acc;
			};
			Eigen::Index best = lo - s;
			double best_p = power_at(best);
			for (Eigen::Index i = lo - s + 1; i <= hi - s; ++i) {
				const double p = power_at(i);
				if (p > best_p) {
					best_p = p;
					best = i;
				}
			}
			// golden-section on the interpolated power around the integer peak
			const Eigen::Index w = SincTable::precise().half_width() + 2;
			std::vector<CVec> local(static_cast<std::size_t>(Q));
			std::vector<Eigen::Index> base(static_cast<std::size_t>(Q), 0);
			for (Eigen::Index q = 0; q < Q; ++q) {
				const CVec &c = parts[std::size_t(q)];
				const Eigen::Index centre = best + q * piece;
				const Eigen::Index a0 = std::max<Eigen::Index>(0, centre - w), a1 = std::min<Eigen::Index>(c.size(), centre + w + 1);
				base[std::size_t(q)] = a0 - q * piece;
				local[std::size_t(q)] = a1 > a0 ? CVec(c.segment(a0, a1 - a0)) : CVec();
			}
			auto power = [&](double t) {
				double acc = 0;
				for (Eigen::Index q = 0; q < Q; ++q) {
					const CVec &c = local[std::size_t(q)];
					if (c.size() == 0)
						continue;
					acc += std::norm(sample_at<cplx>(c, t - double(base[std::size_t(q)]), 1.0, 1, 0.5, SincTable::precise())[0]);
				}
				return acc;
			};
			constexpr double g = 0.6180339887498949;
			double a = double(best) - 1.0, b = double(best) + 1.0;
			double x1 = b - g * (b - a), x2 = a + g * (b - a);
			double f1 = power(x1), f2 = power(x2);
			for (int it = 0; it < 40; ++it) {
				if (f1 < f2) {
					a = x1;
					x1 = x2;
					f1 = f2;
					x2 = a + g * (b - a);
					f2 = power(x2);
				} else {
					b = x2;
					x2 = x1;
					f2 = f1;
					x1 = b - g * (b - a);
					f1 = power(x1);
				}
			}
			return double(s) + 0.5 * (a + b);
		}

		// Earliest matched-filter arrival within `reach` samples before the
		// strongest peak whose magnitude is at least `frac` of it.
		double first_arrival(const CVec &x, const CVec &tmpl, double strongest, Eigen::Index reach, double frac)
		{
			const auto pk = Eigen::Index(std::llround(strongest));
			const Eigen::Index lo = std::max<Eigen::Index>(0, pk - reach);
			const Eigen::Index pad = SincTable::precise().half_width() + 4;
			const Eigen::Index s = std::max<Eigen::Index>(0, lo - pad);
			const Eigen::Index e = std::min<Eigen::Index>(x.size(), pk + tmpl.size() + pad + 1);
			if (e - s < tmpl.size())
				return strongest;
			const CVec c = matched_filter(CVec(x.segment(s, e - s)), tmpl);
			const Eigen::Index ip = std::min<Eigen::Index>(pk - s, c.size() - 1);
			const double top = std::abs(c[ip]);
			for (Eigen::Index i = lo - s; i < ip; ++i) {
				const double v = std::abs(c[i]);
				if (v >= frac * top && v >= std::abs(c[std::max<Eigen::Index>(0, i - 1)]) && v >= std::abs(c[i + 1]))
					return double(s) + refine_peak(c, i);
			}
			return strongest;
		}

		// Preamble resampled to scale a with the carrier offset it implies.
		CVec scaled_template(const CVec &p, double a, double fc, double fs)
		{
			const auto count = Eigen::Index(std::floor(double(p.size() - 1) / a)) + 1;
			CVec t = sample_at<cplx>(p, 0.0, a, count, 0.5 * std::min(1.0, 1.0 / a), SincTable::precise());
			for (Eigen::Index n = 0; n < t.size(); ++n)
				t[n] *= oscillator(fc * (a - 1), fs, n);
			return t;
		}
	} // namespace

	RVec detection_metric(const CVec &x, const OfdmConfig &config)
	{
		const CVec seg = preamble_segment(config);
		return config.preamble.kind == PreambleKind::PnAutocorr ? autocorr_metric(x, seg.size(), config.doppler_min, config.doppler_max)
		                                                        : xcorr_metric(x, seg);
	}

	PreambleDetection detect_preamble(const BasebandSignal &sig, const OfdmConfig &config, Eigen::Index start)
	{
		config.validate();
		PreambleDetection det;
		const CVec seg = preamble_segment(config);
		const Eigen::Index L = seg.size();
		start = std::clamp<Eigen::Index>(start, 0, sig.size());
		const CVec x = sig.samples.segment(start, sig.size() - start);
		std::vector<int> lags;
		const RVec m = config.preamble.kind == PreambleKind::PnAutocorr
		                   ? autocorr_metric(x, L, config.doppler_min, config.doppler_max, &lags)
		                   : xcorr_metric(x, seg);
		Eigen::Index d = 0;
		while (d < m.size() && !(m[d] > config.detection_threshold))
			++d;
		if (d >= m.size()) {
			det.metric = m.size() ? m.maxCoeff() : 0.0;
			return det;
		}
		Eigen::Index best = d;
		for (Eigen::Index i = d; i < std::min<Eigen::Index>(m.size(), d + L); ++i)
			if (m[i] > m[best])
				best = i;
		det.detected = true;
		det.metric = m[best];
		det.coarse = best + start;

		if (config.preamble.kind == PreambleKind::PnAutocorr) {
			// coarse scale from the winning lag, then segment peaks with a
			// template pre-scaled to it
			const double a0 = double(L) / double(lags[std::size_t(best)]);
			const CVec t = scaled_template(seg, a0, config.f_center, sig.sample_rate);
			const double p1 = mf_peak(x, t, best - L / 2, best + L / 2);
			if (p1 < 0) {
				det.detected = false;
				return det;
			}
			const double sep = double(L) / a0;
			const double p2 = mf_peak(x, t, Eigen::Index(std::floor(p1 + sep)) - 3, Eigen::Index(std::ceil(p1 + sep)) + 3);
			if (p2 < 0) {
				det.detected = false;
				return det;
			}
			det.offset = p1 + double(start);
			det.second_peak = p2 + double(start);
			det.doppler_scale = double(L) / (p2 - p1);
		} else {
			det.offset = mf_peak(x, seg, best - 4, best + 4) + double(start);
		}
		return det;
	}

	// ---------------------------------------------------------------- channel estimation

	namespace
	{
		std::vector<double> make_pilots(const OfdmConfig &c)
		{
			std::vector<double> p(std::size_t(c.n_subcarriers), 0.0);
			SplitMix64 rng(c.pilot_seed);
			for (int k = 0; k < c.n_subcarriers; ++k)
				if (c.subcarrier_map[std::size_t(k)] == SubcarrierRole::Pilot)
					p[std::size_t(k)] = (rng() & 1) ? -1.0 : 1.0;
			return p;
		}

		CVec interpolate_pilots(const CVec &Y, const OfdmConfig &c, const std::vector<double> &pilots)
		{
			std::vector<int> idx;
			for (int k = 0; k < c.n_subcarriers; ++k)
				if (c.subcarrier_map[std::size_t(k)] == SubcarrierRole::Pilot)
					idx.push_back(k);
			if (idx.size() < 2)
				throw ParameterError("estimate_channel_pilots: fewer than 2 pilots");
			std::vector<double> mag(idx.size()), ph(idx.size());
			for (std::size_t j = 0; j < idx.size(); ++j) {
				const cplx h = Y[idx[j]] / pilots[std::size_t(idx[j])];
				mag[j] = std::abs(h);
				ph[j] = std::arg(h);
				if (j > 0)
					ph[j] = ph[j - 1] + std::remainder(ph[j] - ph[j - 1], 2 * pi);
			}
			CVec H = CVec::Zero(c.n_subcarriers);
			std::size_t j = 0;
			for (int k = 0; k < c.n_subcarriers; ++k) {
				if (c.subcarrier_map[std::size_t(k)] == SubcarrierRole::Null)
					continue;
				while (j + 1 < idx.size() && idx[j + 1] <= k)
					++j;
				double a, p;
				if (k <= idx.front()) {
					a = mag.front();
					p = ph.front();
				} else if (k >= idx.back()) {
					a = mag.back();
					p = ph.back();
				} else {
					const double w = double(k - idx[j]) / double(idx[j + 1] - idx[j]);
					a = (1 - w) * mag[j] + w * mag[j + 1];
					p = (1 - w) * ph[j] + w * ph[j + 1];
				}
				H[k] = std::polar(a, p);
			}
			return H;
		}

		double median(std::vector<double> v)
		{
			if (v.empty())
				return 0.0;
			auto mid = v.begin() + std::ptrdiff_t(v.size() / 2);
			std::nth_element(v.begin(), mid, v.end());
			return *mid;
		}
	} // namespace

	CVec estimate_channel_pilots(const CVec &block_symbols, const OfdmConfig &config)
	{
		config.validate();
		if (block_symbols.size() != config.n_subcarriers)
			throw ParameterError("estimate_channel_pilots: block size != n_subcarriers");
		return interpolate_pilots(block_symbols, config, make_pilots(config));
	}

	// ---------------------------------------------------------------- transceiver

	OfdmTransceiver::OfdmTransceiver(OfdmConfig config) { reconfigure(std::move(config)); }

	void OfdmTransceiver::reconfigure(OfdmConfig config)
	{
		config.validate();
		config_ = std::move(config);
		segment_ = preamble_segment(config_);
		if (config_.preamble.kind == PreambleKind::PnAutocorr) {
			preamble_.resize(2 * segment_.size());
			preamble_ << segment_, segment_;
		} else {
			preamble_ = segment_;
		}
		pilots_ = make_pilots(config_);
		data_ = config_.data_indices();
		pilot_idx_ = config_.pilot_indices();
		run_start_.assign(data_.size(), 0);
		for (std::size_t i = 0; i < data_.size(); ++i) {
			bool start = i == 0;
			if (!start)
				for (int k = data_[i - 1] + 1; k < data_[i]; ++k)
					if (config_.subcarrier_map[std::size_t(k)] == SubcarrierRole::Null)
						start = true;
			run_start_[i] = start;
		}
		const int active = config_.n_subcarriers - config_.count(SubcarrierRole::Null);
		block_scale_ = active > 0 ? config_.tx_gain * config_.n_subcarriers / std::sqrt(double(active)) : 1.0;
	}

	OfdmFrame OfdmTransceiver::build_frame(const Bits &bits) const
	{
		const OfdmConfig &c = config_;
		if (bits.size() != c.payload_bits())
			throw ParameterError("ofdm_transmit: expected " + std::to_string(c.payload_bits()) + " bits, got " +
			                     std::to_string(bits.size()));
		const int N = c.n_subcarriers, bps = c.bits_per_symbol();
		Eigen::MatrixXcd X = Eigen::MatrixXcd::Zero(c.blocks_per_frame, N);
		std::size_t bit = 0;
		for (int b = 0; b < c.blocks_per_frame; ++b) {
			cplx prev(1, 0);
			for (std::size_t i = 0; i < data_.size(); ++i) {
				if (run_start_[i])
					prev = cplx(1, 0);
				cplx d;
				if (bps == 1) {
					d = bits[bit++] ? cplx(-1, 0) : cplx(1, 0);
				} else {
					const int b0 = bits[bit++] & 1, b1 = bits[bit++] & 1;
					static const cplx gray[4] = {{1, 0}, {0, 1}, {0, -1}, {-1, 0}}; // 00, 01, 10, 11
					d = gray[b0 << 1 | b1];
				}
				prev *= d;
				X(b, data_[i]) = prev;
			}
			for (int k : pilot_idx_)
				X(b, k) = pilots_[std::size_t(k)];
		}

		const Eigen::Index G = c.guard_samples(), P = preamble_.size(), PG = c.preamble_guard_samples();
		CVec w = CVec::Zero(c.frame_samples());
		w.head(P) = c.tx_gain * preamble_;
		for (int b = 0; b < c.blocks_per_frame; ++b) {
			CVec shifted(N);
			for (int k = 0; k < N; ++k)
				shifted[((k - N / 2) % N + N) % N] = X(b, k);
			CVec t = ifft(shifted);
			const double rms = std::sqrt(t.squaredNorm() / N);
			if (rms > 0)
				t *= c.tx_gain / rms;
			w.segment(P + PG + b * (N + G), N) = t;
		}
		return {bits, c, X, BasebandSignal(std::move(w), c.sample_rate())};
	}

	Eigen::MatrixXcd OfdmTransceiver::demodulate_blocks(const CVec &x, double first_block) const
	{
		const OfdmConfig &c = config_;
		const int N = c.n_subcarriers;
		const Eigen::Index F = c.fold_samples();
		Eigen::MatrixXcd Y(c.blocks_per_frame, N);
		CVec v(N);
		for (int b = 0; b < c.blocks_per_frame; ++b) {
			const auto s = Eigen::Index(std::llround(first_block + double(b) * double(c.block_stride()))) - c.timing_backoff;
			for (Eigen::Index n = 0; n < N; ++n) {
				const Eigen::Index i = s + n;
				v[n] = (i >= 0 && i < x.size()) ? x[i] : cplx(0);
				if (n < F && i + N >= 0 && i + N < x.size())
					v[n] += x[i + N];
			}
			const CVec V = fft(v);
			for (int k = 0; k < N; ++k)
				Y(b, k) = V[((k - N / 2) % N + N) % N] / block_scale_;
		}
		return Y;
	}

	RVec OfdmTransceiver::demap(const Eigen::MatrixXcd &Y) const
	{
		const OfdmConfig &c = config_;
		const int bps = c.bits_per_symbol();
		RVec llr = RVec::Zero(Eigen::Index(c.payload_bits()));
		const double thr = std::pow(10.0, c.erasure_db / 20.0);
		const cplx rot = std::polar(1.0, pi / 4);
		Eigen::Index bit = 0;
		for (int b = 0; b < c.blocks_per_frame; ++b) {
			const CVec Yb = Y.row(b).transpose();
			const CVec H = interpolate_pilots(Yb, c, pilots_);
			std::vector<double> mags;
			mags.reserve(data_.size() + pilot_idx_.size());
			for (int k = 0; k < c.n_subcarriers; ++k)
				if (c.subcarrier_map[std::size_t(k)] != SubcarrierRole::Null)
					mags.push_back(std::abs(H[k]));
			const double med = median(mags);
			const double floor_mag = thr * med;
			const double norm = med > 0 ? med * med : 1.0;
			cplx prev_s(1, 0);
			double prev_g2 = 0;
			bool prev_ok = true;
			for (std::size_t i = 0; i < data_.size(); ++i) {
				const int k = data_[i];
				const double g = std::abs(H[k]);
				const bool ok = g > floor_mag && g > 0;
				const cplx s = ok ? Yb[k] / H[k] : cplx(0);
				const double g2 = g * g / norm;
				cplx z;
				double w;
				bool usable;
				if (run_start_[i]) {
					z = s;
					w = g2;
					usable = ok;
				} else {
					z = s * std::conj(prev_s);
					w = (g2 > 0 && prev_g2 > 0) ? 1.0 / (1.0 / g2 + 1.0 / prev_g2) : 0.0;
					usable = ok && prev_ok;
				}
				if (bps == 1) {
					llr[bit++] = usable ? w * z.real() : 0.0;
				} else {
					const cplx zr = z * rot;
					llr[bit++] = usable ? w * zr.imag() : 0.0;
					llr[bit++] = usable ? w * zr.real() : 0.0;
				}
				prev_s = s;
				prev_g2 = g2;
				prev_ok = ok;
			}
		}
		return llr;
	}

	RxResult OfdmTransceiver::receive(const BasebandSignal &sig_in, const Bits *reference, Eigen::Index start) const
	{
		const OfdmConfig &c = config_;
		RxResult res;
		const double fs = c.sample_rate();

		// bring the input to the OFDM rate
		const double ratio = sig_in.sample_rate / fs;
		const double M = std::round(ratio);
		if (M < 1 || std::abs(ratio - M) > 1e-9 * ratio)
			throw ParameterError("ofdm_receive: input rate must be an integer multiple of the bandwidth");
		BasebandSignal sig(fs);
		if (M == 1) {
			sig = sig_in;
		} else {
			const auto count = Eigen::Index(std::floor(double(sig_in.size()) / M));
			sig = BasebandSignal(sample_at<cplx>(sig_in.samples, 0.0, M, count, 0.5 / M, SincTable::converter()), fs);
			start = Eigen::Index(std::floor(double(start) / M));
		}
		const CVec &x = sig.samples;

		PreambleDetection det = detect_preamble(sig, c, start);
		res.diag.detection_metric = det.metric;
		if (!det.detected)
			return res;

		const Eigen::Index L = segment_.size();
		double a = det.doppler_scale;
		if (c.preamble.kind == PreambleKind::MseqXcorr) {
			// scale bank around the detected peak
			double best_mag = -1;
			const auto pk = Eigen::Index(std::llround(det.offset));
			const Eigen::Index lo = std::max<Eigen::Index>(0, pk - 8);
			const Eigen::Index hi = std::min<Eigen::Index>(x.size(), pk + L + 16);
			const CVec win = x.segment(lo, hi - lo);
			for (int k = -20; k <= 20; ++k) {
				const double cand = 1.0 + k * 1e-4;
				if (cand < c.doppler_min || cand > c.doppler_max)
					continue;
				const CVec t = scaled_template(segment_, cand, c.f_center, fs);
				if (t.size() > win.size())
					continue;
				const CVec mf = matched_filter(win, t);
				const double v = mf.head(std::min<Eigen::Index>(mf.size(), 24)).cwiseAbs().maxCoeff();
				if (v > best_mag) {
					best_mag = v;
					a = cand;
				}
			}
		}
		if (!(a >= c.doppler_min && a <= c.doppler_max)) {
			res.diag.detected = false;
			res.diag.doppler_scale = a;
			return res;
		}

		// Doppler compensation on the frame span
		const Eigen::Index margin = 64;
		const auto s0 = std::max<Eigen::Index>(0, Eigen::Index(std::floor(det.offset)) - margin);
		const auto span = Eigen::Index(std::ceil(double(c.frame_samples()) / a)) + 2 * margin + c.fold_samples();
		const Eigen::Index s1 = std::min<Eigen::Index>(x.size(), s0 + span);
		CVec z = x.segment(s0, s1 - s0);
		if (std::abs(a - 1.0) > 1e-9)
			z = resample(BasebandSignal(z, fs), 1.0 / a).samples;
		const double expect = (det.offset - double(s0)) * a;

		// re-time on the compensated signal, then lock to the first arrival
		double p1 = mf_peak(z, segment_, Eigen::Index(std::floor(expect)) - 6, Eigen::Index(std::ceil(expect)) + 6);
		if (p1 < 0)
			p1 = expect;

		// carrier offset: autocorrelation phase, ambiguity resolved by fc (a - 1) / a
		double cfo = c.f_center * (a - 1) / a;
		if (c.preamble.kind == PreambleKind::PnAutocorr) {
			const auto i0 = Eigen::Index(std::llround(p1));
			if (i0 >= 0 && i0 + 2 * L <= z.size()) {
				cplx P(0);
				for (Eigen::Index n = 0; n < L; ++n)
					P += z[i0 + n + L] * std::conj(z[i0 + n]);
				const double unit = fs / double(L);
				const double meas = std::arg(P) / (2 * pi) * unit;
				cfo = meas + std::round((cfo - meas) / unit) * unit;
			}
		}
		if (cfo != 0.0)
			for (Eigen::Index n = 0; n < z.size(); ++n)
				z[n] *= std::conj(oscillator(cfo, fs, n));

		const double first = first_arrival(z, segment_, p1, std::max<Eigen::Index>(0, c.guard_samples() / 2), 0.5);

		const double first_block = first + double(c.preamble_samples() + c.preamble_guard_samples());
		const Eigen::MatrixXcd Y = demodulate_blocks(z, first_block);
		res.llr = demap(Y);
		res.bits.resize(std::size_t(res.llr.size()));
		for (Eigen::Index i = 0; i < res.llr.size(); ++i)
			res.bits[std::size_t(i)] = res.llr[i] < 0 ? 1 : 0;

		RxDiagnostics &dg = res.diag;
		dg.detected = true;
		dg.timing_offset = (det.offset) * M;
		dg.doppler_scale = a;
		dg.cfo_hz = cfo;
		dg.frame_end = Eigen::Index(std::ceil((det.offset + double(c.frame_samples()) / a) * M));

		// SNR: active frame power against a leading noise-only window
		{
			const auto d0 = Eigen::Index(std::floor(det.offset));
			const Eigen::Index need = 256;
			const Eigen::Index nw_end = std::max<Eigen::Index>(0, d0 - 16);
			const Eigen::Index nw_beg = std::max<Eigen::Index>(0, nw_end - std::max<Eigen::Index>(need, c.n_subcarriers));
			double pn = -1;
			if (nw_end - nw_beg >= need)
				pn = x.segment(nw_beg, nw_end - nw_beg).squaredNorm() / double(nw_end - nw_beg);
			else if (c.guard_samples() >= 2 * need) {
				// late half of each guard: beyond most of the multipath tail
				double acc = 0;
				Eigen::Index cnt = 0;
				for (int b = 0; b < c.blocks_per_frame; ++b) {
					const auto gs = Eigen::Index(std::llround(first_block)) + b * c.block_stride() + c.n_subcarriers +
					                c.guard_samples() / 2;
					const Eigen::Index ge = std::min<Eigen::Index>(z.size(), gs + c.guard_samples() / 2);
					if (ge > gs) {
						acc += z.segment(gs, ge - gs).squaredNorm();
						cnt += ge - gs;
					}
				}
				if (cnt > 0)
					pn = acc / double(cnt);
			}
			double ps = 0;
			Eigen::Index cnt = 0;
			auto add = [&](Eigen::Index beg, Eigen::Index len) {
				beg = std::max<Eigen::Index>(0, beg);
				const Eigen::Index end = std::min<Eigen::Index>(z.size(), beg + len);
				if (end > beg) {
					ps += z.segment(beg, end - beg).squaredNorm();
					cnt += end - beg;
				}
			};
			add(Eigen::Index(std::llround(first)), c.preamble_samples());
			for (int b = 0; b < c.blocks_per_frame; ++b)
				add(Eigen::Index(std::llround(first_block)) + b * c.block_stride(), c.n_subcarriers);
			ps = cnt ? ps / double(cnt) : 0.0;
			if (pn > 0)
				dg.snr_estimate = 10 * std::log10(std::max(ps - pn, 1e-12 * pn) / pn);
			else
				dg.snr_estimate = std::numeric_limits<double>::infinity();
		}

		if (reference) {
			if (reference->size() != res.bits.size())
				throw ParameterError("ofdm_receive: reference length != payload capacity");
			dg.per_subcarrier_errors = Eigen::MatrixXi::Zero(c.blocks_per_frame, c.n_subcarriers);
			const int bps = c.bits_per_symbol();
			std::size_t bit = 0;
			for (int b = 0; b < c.blocks_per_frame; ++b)
				for (int k : data_)
					for (int j = 0; j < bps; ++j, ++bit)
						if (res.bits[bit] != (*reference)[bit]) {
							++dg.per_subcarrier_errors(b, k);
							++dg.bit_errors;
						}
			dg.ber = res.bits.empty() ? 0.0 : double(dg.bit_errors) / double(res.bits.size());
		}
		return res;
	}

	BasebandSignal ofdm_transmit(const Bits &bits, const OfdmConfig &config) { return OfdmTransceiver(config).transmit(bits); }

	RxResult ofdm_receive(const BasebandSignal &sig, const OfdmConfig &config, const Bits *reference)
	{
		return OfdmTransceiver(config).receive(sig, reference);
	}
} // namespace uam
