#include "uam/css.hpp"

#include "uam/dsp.hpp"
#include "uam/sequences.hpp"

#include <algorithm>
#include <cmath>

namespace uam
{
	namespace
	{
		Bits sync_bits()
		{
			Bits b(32);
			for (int i = 0; i < 32; ++i)
				b[std::size_t(i)] = (CssConfig::kSyncWord >> (31 - i)) & 1u;
			return b;
		}

		void place(CVec &out, Eigen::Index at, const Bits &bits, const CVec &up, const CVec &down, Eigen::Index stride)
		{
			for (std::size_t i = 0; i < bits.size(); ++i)
				out.segment(at + Eigen::Index(i) * stride, up.size()) = bits[i] ? up : down;
		}

		double slot_energy(const CVec &x, Eigen::Index at, const CVec &tmpl)
		{
			// Best of three lags absorbs a one-sample timing slip.
			double best = 0;
			for (Eigen::Index d = -1; d <= 1; ++d) {
				const Eigen::Index a = at + d;
				if (a < 0 || a + tmpl.size() > x.size())
					continue;
				best = std::max(best, std::norm(tmpl.dot(x.segment(a, tmpl.size()))));
			}
			return best;
		}
	} // namespace

	void CssConfig::validate() const
	{
		if (!(bandwidth > 0))
			throw ParameterError("css: bandwidth must be positive");
		if (!(chirp_duration > 0))
			throw ParameterError("css: chirp_duration must be positive");
		if (!(guard >= 0))
			throw ParameterError("css: guard must be >= 0");
		if (sample_rate != 0 && sample_rate < bandwidth)
			throw ParameterError("css: sample rate below the chirp bandwidth");
		if (!(detection_threshold > 0 && detection_threshold < 1))
			throw ParameterError("css: detection threshold must be in (0, 1)");
		if (chirp_samples() < 2)
			throw ParameterError("css: chirp shorter than two samples");
	}

	Eigen::Index CssConfig::chirp_samples() const { return static_cast<Eigen::Index>(std::llround(chirp_duration * rate())); }
	Eigen::Index CssConfig::guard_samples() const { return static_cast<Eigen::Index>(std::llround(guard * rate())); }

	CssConfig CssConfig::forward() { return {}; }

	CssConfig CssConfig::feedback()
	{
		CssConfig c;
		c.bandwidth = 31.125e3;
		c.chirp_duration = 4e-3;
		return c;
	}

	BasebandSignal css_up_chirp(const CssConfig &config)
	{
		config.validate();
		const double fs = config.rate();
		return generate_lfm({-config.bandwidth / 2, config.bandwidth / 2, double(config.chirp_samples()) / fs, 1.0}, fs);
	}

	BasebandSignal css_down_chirp(const CssConfig &config)
	{
		BasebandSignal up = css_up_chirp(config);
		up.samples = up.samples.conjugate();
		return up;
	}

	BasebandSignal css_sync_waveform(const CssConfig &config) { return css_modulate({}, config); }

	BasebandSignal css_modulate(const Bits &bits, const CssConfig &config)
	{
		const CVec up = css_up_chirp(config).samples, down = css_down_chirp(config).samples;
		const Eigen::Index stride = config.symbol_samples();
		const Bits sync = sync_bits();
		CVec out = CVec::Zero(Eigen::Index(sync.size() + bits.size()) * stride);
		place(out, 0, sync, up, down, stride);
		place(out, Eigen::Index(sync.size()) * stride, bits, up, down, stride);
		return {std::move(out), config.rate()};
	}

	RVec css_sync_metric(const CVec &x, const CssConfig &config)
	{
		const CVec t = css_sync_waveform(config).samples;
		const Eigen::Index L = t.size();
		if (x.size() < L)
			return RVec::Zero(0);
		const Eigen::Index n = x.size() - L + 1;
		// the sync word is 32 shifted chirps: sum short per-chirp correlations
		const CVec cu = matched_filter(x, css_up_chirp(config).samples), cd = matched_filter(x, css_down_chirp(config).samples);
		const Bits sync = sync_bits();
		const Eigen::Index stride = config.symbol_samples();
		CVec c = CVec::Zero(n);
		for (std::size_t j = 0; j < sync.size(); ++j)
			c += (sync[j] ? cu : cd).segment(Eigen::Index(j) * stride, n);
		RVec e(x.size() + 1);
		e[0] = 0;
		for (Eigen::Index i = 0; i < x.size(); ++i)
			e[i + 1] = e[i] + std::norm(x[i]);
		const double tn = t.norm();
		RVec m(n);
		for (Eigen::Index d = 0; d < n; ++d) {
			const double w = e[d + L] - e[d];
			m[d] = w > 1e-300 ? std::abs(c[d]) / (tn * std::sqrt(w)) : 0.0;
		}
		return m;
	}

	CssResult css_demodulate(const BasebandSignal &sig, const CssConfig &config, std::size_t max_bits, Eigen::Index from,
	                         Eigen::Index search)
	{
		config.validate();
		if (sig.sample_rate != config.rate())
			throw ParameterError("css_demodulate: signal rate differs from the configured rate");
		CssResult r;
		if (from < 0 || from >= sig.size())
			return r;
		const CVec x = sig.samples.tail(sig.size() - from);
		const Eigen::Index L = css_sync_waveform(config).size();
		// keep one template of metric past the last allowed start for the peak refinement
		const RVec m = search > 0 && search + 2 * L < x.size() ? css_sync_metric(CVec(x.head(search + 2 * L)), config)
		                                                       : css_sync_metric(x, config);
		const Eigen::Index starts = search > 0 ? std::min(search, m.size()) : m.size();
		Eigen::Index first = -1;
		for (Eigen::Index d = 0; d < starts; ++d)
			if (m[d] > config.detection_threshold) {
				first = d;
				break;
			}
		if (first < 0) {
			r.metric = m.size() ? m.maxCoeff() : 0.0;
			return r;
		}
		Eigen::Index peak = first;
		for (Eigen::Index d = first; d < std::min(m.size(), first + L); ++d)
			if (m[d] > m[peak])
				peak = d;
		r.detected = true;
		r.metric = m[peak];
		r.start = from + peak;

		const Eigen::Index stride = config.symbol_samples();
		const CVec up = css_up_chirp(config).samples, down = css_down_chirp(config).samples;
		const Eigen::Index at = peak + 32 * stride;
		r.payload_start = from + at;
		Eigen::Index slots = at + up.size() <= x.size() ? (x.size() - at - up.size()) / stride + 1 : 0;
		if (max_bits > 0)
			slots = std::min<Eigen::Index>(slots, Eigen::Index(max_bits));
		r.bits.resize(std::size_t(slots));
		for (Eigen::Index i = 0; i < slots; ++i)
			r.bits[std::size_t(i)] = slot_energy(x, at + i * stride, up) > slot_energy(x, at + i * stride, down) ? 1 : 0;
		return r;
	}
} // namespace uam
