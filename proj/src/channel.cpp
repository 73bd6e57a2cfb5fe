#include "uam/channel.hpp"

#include "uam/dsp.hpp"
#include "uam/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

namespace uam
{
	namespace
	{
		constexpr double kTwoPi = 2 * std::numbers::pi;
		constexpr Eigen::Index kNoiseBlock = 4096;
		constexpr int kShapingGrid = 1024;
		constexpr int kShapingHalf = 255;

		bool is_integer_delay(double d) { return std::abs(d - std::round(d)) < 1e-9; }

		/// y[k] = x(k - d) for k < count.
		template <typename T>
		Eigen::Matrix<T, Eigen::Dynamic, 1> delayed(const Eigen::Matrix<T, Eigen::Dynamic, 1> &x, double d, Eigen::Index count)
		{
			if (is_integer_delay(d)) {
				Eigen::Matrix<T, Eigen::Dynamic, 1> y = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(count);
				const auto shift = static_cast<Eigen::Index>(std::llround(d));
				const Eigen::Index n = std::min<Eigen::Index>(x.size(), count - shift);
				if (n > 0)
					y.segment(shift, n) = x.head(n);
				return y;
			}
			return fractional_delay(x, d, count);
		}

		Eigen::Index output_length(Eigen::Index n, const ChannelModel &m, double fs)
		{
			return n + static_cast<Eigen::Index>(std::ceil(m.max_delay() * fs - 1e-9));
		}

		/// Zero-phase FIR sampled from gain(f) on a grid over [-fs/2, fs/2),
		/// Kaiser-windowed, applied with a centred FFT convolution.
		template <typename Gain>
		CVec shape(const CVec &x, double fs, Gain gain)
		{
			CVec H(kShapingGrid);
			for (int k = 0; k < kShapingGrid; ++k) {
				const int kk = k < kShapingGrid / 2 ? k : k - kShapingGrid;
				H[k] = gain(double(kk) * fs / kShapingGrid);
			}
			const CVec h = ifft(H);
			const double beta = kaiser_beta(70.0);
			CVec g(2 * kShapingHalf + 1);
			for (int m = -kShapingHalf; m <= kShapingHalf; ++m)
				g[m + kShapingHalf] = h[(m + kShapingGrid) % kShapingGrid] * kaiser_window(double(m) / (kShapingHalf + 1), beta);
			return convolve(x, g).segment(kShapingHalf, x.size());
		}

		double interp_db(const std::vector<std::pair<double, double>> &table, double f)
		{
			if (f <= table.front().first)
				return table.front().second;
			if (f >= table.back().first)
				return table.back().second;
			const auto hi = std::upper_bound(table.begin(), table.end(), f, [](double v, const auto &p) { return v < p.first; });
			const auto lo = hi - 1;
			const double t = (f - lo->first) / (hi->first - lo->first);
			return lo->second + t * (hi->second - lo->second);
		}

		/// Multipath and time variation on a baseband-equivalent signal.
		CVec multipath(const CVec &x, double fs, double fc, const ChannelModel &m, Eigen::Index count)
		{
			CVec y = CVec::Zero(count);
			bool integer = true;
			for (const Tap &tap : m.taps)
				integer = integer && is_integer_delay(tap.delay * fs);
			if (m.profile || integer) {
				for (std::size_t i = 0; i < m.taps.size(); ++i) {
					const Tap &tap = m.taps[i];
					const cplx g = tap.gain * std::polar(1.0, -kTwoPi * fc * tap.delay);
					CVec c = delayed(x, tap.delay * fs, count);
					if (m.profile) {
						for (Eigen::Index k = 0; k < count; ++k)
							c[k] *= m.profile->gain_at(i, double(k) / fs);
					}
					y += g * c;
				}
				return y;
			}

			// Static channel with fractional delays: one FIR, FFT convolution.
			const SincTable &kernel = SincTable::precise();
			const int hw = kernel.half_width();
			Eigen::Index lo = 0, hi = 0;
			for (const Tap &tap : m.taps) {
				const double d = tap.delay * fs;
				lo = std::min<Eigen::Index>(lo, static_cast<Eigen::Index>(std::floor(d)) - hw);
				hi = std::max<Eigen::Index>(hi, static_cast<Eigen::Index>(std::ceil(d)) + hw);
			}
			CVec h = CVec::Zero(hi - lo + 1);
			for (const Tap &tap : m.taps) {
				const double d = tap.delay * fs;
				const cplx g = tap.gain * std::polar(1.0, -kTwoPi * fc * tap.delay);
				if (is_integer_delay(d)) {
					h[std::llround(d) - lo] += g;
					continue;
				}
				const auto a = static_cast<Eigen::Index>(std::ceil(d - hw)), b = static_cast<Eigen::Index>(std::floor(d + hw));
				double wall = 0;
				for (Eigen::Index j = a; j <= b; ++j)
					wall += kernel(double(j) - d);
				for (Eigen::Index j = a; j <= b; ++j)
					h[j - lo] += g * kernel(double(j) - d) / wall;
			}
			const CVec full = convolve(x, h);
			for (Eigen::Index k = 0; k < count; ++k) {
				const Eigen::Index j = k - lo;
				if (j >= 0 && j < full.size())
					y[k] = full[j];
			}
			return y;
		}

		void add_interferers(CVec &y, const ChannelModel &m, double fc, double fs, Eigen::Index first, SplitMix64 &rng)
		{
			for (const Interferer &tone : m.interferers) {
				const double phase = kTwoPi * rng.uniform();
				const double f = tone.frequency - fc;
				if (std::abs(f) >= fs / 2 || tone.power <= 0)
					continue;
				const double amp = std::sqrt(2 * tone.power);
				for (Eigen::Index k = 0; k < y.size(); ++k)
					y[k] += amp * std::polar(1.0, phase) * oscillator(f, fs, first + k);
			}
		}
	} // namespace

	void TimeVaryingProfile::validate(std::size_t n_taps) const
	{
		if (times.empty())
			throw ParameterError("profile: no knots");
		if (!std::is_sorted(times.begin(), times.end()))
			throw ParameterError("profile: knot times must be ascending");
		if (gains.size() != n_taps)
			throw ParameterError("profile: one trajectory per tap required");
		for (const auto &g : gains)
			if (g.size() != times.size())
				throw ParameterError("profile: trajectory length differs from knot count");
		if (duration < times.back())
			throw ParameterError("profile: trajectories must cover the duration");
	}

	cplx TimeVaryingProfile::gain_at(std::size_t tap, double t) const
	{
		const auto &g = gains[tap];
		if (t <= times.front())
			return g.front();
		if (t >= times.back())
			return g.back();
		const auto j = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), t) - times.begin());
		const double u = (t - times[j - 1]) / (times[j] - times[j - 1]);
		return g[j - 1] + u * (g[j] - g[j - 1]);
	}

	void ChannelModel::validate() const
	{
		if (taps.empty())
			throw ParameterError("channel: at least one tap required");
		for (const Tap &t : taps)
			if (!(t.delay >= 0))
				throw ParameterError("channel: tap delays must be >= 0");
		for (std::size_t i = 1; i < taps.size(); ++i)
			if (taps[i].delay < taps.front().delay)
				throw ParameterError("channel: first tap must have the smallest delay");
		if (!(doppler_scale >= 0.9 && doppler_scale <= 1.1))
			throw ParameterError("channel: doppler_scale outside [0.9, 1.1]");
		if (!(noise_psd >= 0))
			throw ParameterError("channel: noise_psd must be >= 0");
		if (!std::isfinite(attenuation_db))
			throw ParameterError("channel: attenuation_db must be finite");
		if (!(turnaround >= 0))
			throw ParameterError("channel: turnaround must be >= 0");
		if (!(thorp_range >= 0))
			throw ParameterError("channel: thorp_range must be >= 0");
		for (std::size_t i = 1; i < response_curve.size(); ++i)
			if (!(response_curve[i].first > response_curve[i - 1].first))
				throw ParameterError("channel: response curve frequencies must be ascending");
		for (const Interferer &f : interferers)
			if (!(f.power >= 0) || !(f.frequency >= 0))
				throw ParameterError("channel: interferer frequency and power must be >= 0");
		if (profile)
			profile->validate(taps.size());
	}

	double ChannelModel::max_delay() const
	{
		double d = 0;
		for (const Tap &t : taps)
			d = std::max(d, t.delay);
		return d;
	}

	ChannelModel ChannelModel::identity() { return {}; }

	ChannelModel ChannelModel::marina()
	{
		ChannelModel m;
		m.taps = {{0.0, 1.0}, {1.5e-3, db_to_power(-6.0 / 2)}, {3.1e-3, db_to_power(-9.0 / 2)}, {5.0e-3, db_to_power(-12.0 / 2)}};
		m.noise_psd = noise_psd_for_snr(kMarinaSnrDb, 1.0, 125e3);
		return m;
	}

	double thorp_absorption_db_per_km(double f)
	{
		const double k = f / 1e3;
		const double k2 = k * k;
		return 0.11 * k2 / (1 + k2) + 44 * k2 / (4100 + k2) + 2.75e-4 * k2 + 0.003;
	}

	double shaping_gain(const ChannelModel &model, double f)
	{
		double db = 0;
		if (!model.response_curve.empty())
			db += interp_db(model.response_curve, std::abs(f));
		if (model.thorp_range > 0)
			db -= thorp_absorption_db_per_km(std::abs(f)) * model.thorp_range / 1e3;
		return std::pow(10.0, db / 20);
	}

	double baseband_noise_variance(const ChannelModel &model, double sample_rate) { return 2 * model.noise_psd * sample_rate; }

	BasebandSignal propagate_noiseless(const BasebandSignal &sig, double f_center, const ChannelModel &model)
	{
		model.validate();
		const double fs = sig.sample_rate;
		if (sig.empty())
			return BasebandSignal(fs);
		CVec x = sig.samples * std::pow(10.0, -model.attenuation_db / 20);
		if (model.shaped())
			x = shape(x, fs, [&](double f) { return cplx(shaping_gain(model, f_center + f)); });
		if (model.doppler_scale != 1.0) {
			const double a = model.doppler_scale;
			x = resample(BasebandSignal(x, fs), a).samples;
			const double cfo = f_center * (a - 1);
			for (Eigen::Index k = 0; k < x.size(); ++k)
				x[k] *= oscillator(cfo, fs, k);
		}
		return {multipath(x, fs, f_center, model, output_length(x.size(), model, fs)), fs};
	}

	BasebandSignal propagate(const BasebandSignal &sig, double f_center, const ChannelModel &model)
	{
		BasebandSignal out = propagate_noiseless(sig, f_center, model);
		if (out.empty())
			return out;
		const double fs = out.sample_rate;
		SplitMix64 rng(model.rng_seed);
		add_interferers(out.samples, model, f_center, fs, 0, rng);
		const double var = baseband_noise_variance(model, fs);
		if (var > 0)
			for (Eigen::Index k = 0; k < out.size(); ++k)
				out.samples[k] += rng.complex_normal(var);
		return out;
	}

	PassbandSignal propagate(const PassbandSignal &sig, const ChannelModel &model)
	{
		model.validate();
		const double fs = sig.sample_rate;
		if (sig.empty())
			return PassbandSignal(fs);
		RVec x = sig.samples * std::pow(10.0, -model.attenuation_db / 20);
		if (model.shaped())
			x = shape(CVec(x.cast<cplx>()), fs, [&](double f) { return cplx(shaping_gain(model, f)); }).real();
		if (model.doppler_scale != 1.0) {
			const double a = model.doppler_scale;
			const auto count = static_cast<Eigen::Index>(std::floor(double(x.size() - 1) / a)) + 1;
			x = sample_at(x, 0.0, a, count, 0.5 * std::min(1.0, 1.0 / a), SincTable::precise());
		}
		const Eigen::Index count = output_length(x.size(), model, fs);
		bool real_gains = !model.profile;
		for (const Tap &t : model.taps)
			real_gains = real_gains && t.gain.imag() == 0.0;
		RVec out = RVec::Zero(count);
		if (real_gains) {
			for (const Tap &t : model.taps)
				out += t.gain.real() * delayed(x, t.delay * fs, count);
		} else {
			// Complex gains act on the analytic signal, which already carries the carrier.
			out = multipath(analytic_signal(x), fs, 0.0, model, count).real();
		}

		SplitMix64 rng(model.rng_seed);
		for (const Interferer &tone : model.interferers) {
			const double phase = kTwoPi * rng.uniform();
			if (tone.frequency >= fs / 2 || tone.power <= 0)
				continue;
			const double amp = std::sqrt(2 * tone.power);
			for (Eigen::Index k = 0; k < out.size(); ++k)
				out[k] += amp * std::cos(std::arg(oscillator(tone.frequency, fs, k)) + phase);
		}
		const double sigma = std::sqrt(model.noise_psd * fs / 2);
		if (sigma > 0)
			for (Eigen::Index k = 0; k < out.size(); ++k)
				out[k] += sigma * rng.normal();
		return {out, fs};
	}

	double snr_at_receiver(const ChannelModel &model, const BasebandSignal &tx, double f_center, double noise_bandwidth)
	{
		const double bw = noise_bandwidth > 0 ? noise_bandwidth : tx.sample_rate;
		double noise = 2 * model.noise_psd * bw;
		for (const Interferer &tone : model.interferers)
			if (std::abs(tone.frequency - f_center) < bw / 2)
				noise += 2 * tone.power;
		const Eigen::Index on = (tx.samples.array().abs() > 0).count();
		if (on == 0)
			return -std::numeric_limits<double>::infinity();
		if (noise <= 0)
			return std::numeric_limits<double>::infinity();
		const double power = propagate_noiseless(tx, f_center, model).samples.squaredNorm() / double(on);
		return power_to_db(power / noise);
	}

	double snr_at_receiver(const ChannelModel &model, const PassbandSignal &tx, double f_low, double f_high)
	{
		if (!(f_high > f_low))
			throw ParameterError("snr_at_receiver: empty band");
		double noise = model.noise_psd * (f_high - f_low);
		for (const Interferer &tone : model.interferers)
			if (tone.frequency >= f_low && tone.frequency < f_high)
				noise += tone.power;
		const Eigen::Index on = (tx.samples.array().abs() > 0).count();
		if (on == 0)
			return -std::numeric_limits<double>::infinity();
		if (noise <= 0)
			return std::numeric_limits<double>::infinity();
		ChannelModel quiet = model;
		quiet.noise_psd = 0;
		quiet.interferers.clear();
		const double power = propagate(tx, quiet).samples.squaredNorm() / double(on);
		return power_to_db(power / noise);
	}

	double noise_psd_for_snr(double snr_db, double signal_power, double noise_bandwidth)
	{
		if (!(noise_bandwidth > 0))
			throw ParameterError("noise_psd_for_snr: bandwidth must be positive");
		return signal_power / (2 * noise_bandwidth * db_to_power(snr_db));
	}

	// ---------------------------------------------------------------- config

	namespace
	{
		using nlohmann::json;

		void reject_unknown(const json &j, std::initializer_list<const char *> keys, const std::string &where)
		{
			if (!j.is_object())
				throw ParameterError(where + ": expected an object");
			for (const auto &[k, v] : j.items()) {
				(void)v;
				if (std::find_if(keys.begin(), keys.end(), [&](const char *s) { return k == s; }) == keys.end())
					throw ParameterError(where + ": unknown key '" + k + "'");
			}
		}

		Tap tap_from_json(const json &j)
		{
			reject_unknown(j, {"delay", "gain_db", "phase_deg", "gain"}, "tap");
			Tap t;
			t.delay = j.value("delay", 0.0);
			if (j.contains("gain")) {
				const auto &g = j.at("gain");
				if (!g.is_array() || g.size() != 2)
					throw ParameterError("tap: gain must be [re, im]");
				t.gain = {g[0].get<double>(), g[1].get<double>()};
			} else {
				t.gain = std::polar(std::pow(10.0, j.value("gain_db", 0.0) / 20),
				                    j.value("phase_deg", 0.0) * std::numbers::pi / 180);
			}
			return t;
		}
	} // namespace

	ChannelModel channel_model_from_json(const std::string &text)
	{
		json j;
		try {
			j = json::parse(text);
		} catch (const json::parse_error &e) {
			throw ParameterError(std::string("channel config: ") + e.what());
		}
		reject_unknown(j,
		               {"schema_version", "taps", "doppler_scale", "noise_psd", "interferers", "attenuation_db",
		                "response_curve", "thorp_range", "turnaround", "rng_seed", "preset"},
		               "channel config");
		if (j.value("schema_version", 0) != 1)
			throw ParameterError("channel config: schema_version must be 1");
		ChannelModel m;
		try {
			const std::string preset = j.value("preset", std::string("identity"));
			if (preset == "marina")
				m = ChannelModel::marina();
			else if (preset != "identity")
				throw ParameterError("channel config: unknown preset '" + preset + "'");
			if (j.contains("taps")) {
				m.taps.clear();
				for (const auto &t : j.at("taps"))
					m.taps.push_back(tap_from_json(t));
			}
			m.doppler_scale = j.value("doppler_scale", m.doppler_scale);
			m.noise_psd = j.value("noise_psd", m.noise_psd);
			m.attenuation_db = j.value("attenuation_db", m.attenuation_db);
			m.thorp_range = j.value("thorp_range", m.thorp_range);
			m.turnaround = j.value("turnaround", m.turnaround);
			m.rng_seed = j.value("rng_seed", m.rng_seed);
			if (j.contains("interferers"))
				for (const auto &f : j.at("interferers")) {
					reject_unknown(f, {"frequency", "power"}, "interferer");
					m.interferers.push_back({f.at("frequency").get<double>(), f.at("power").get<double>()});
				}
			if (j.contains("response_curve"))
				for (const auto &p : j.at("response_curve"))
					m.response_curve.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
		} catch (const json::exception &e) {
			throw ParameterError(std::string("channel config: ") + e.what());
		}
		m.validate();
		return m;
	}

	ChannelModel load_channel_model(const std::filesystem::path &path)
	{
		std::ifstream in(path);
		if (!in)
			throw ParameterError("cannot open channel config " + path.string());
		std::stringstream ss;
		ss << in.rdbuf();
		return channel_model_from_json(ss.str());
	}

	std::string channel_model_to_json(const ChannelModel &m)
	{
		nlohmann::ordered_json j;
		j["schema_version"] = 1;
		j["taps"] = nlohmann::ordered_json::array();
		for (const Tap &t : m.taps)
			j["taps"].push_back({{"delay", t.delay}, {"gain", {t.gain.real(), t.gain.imag()}}});
		j["doppler_scale"] = m.doppler_scale;
		j["noise_psd"] = m.noise_psd;
		j["interferers"] = nlohmann::ordered_json::array();
		for (const Interferer &f : m.interferers)
			j["interferers"].push_back({{"frequency", f.frequency}, {"power", f.power}});
		j["attenuation_db"] = m.attenuation_db;
		j["response_curve"] = nlohmann::ordered_json::array();
		for (const auto &[f, g] : m.response_curve)
			j["response_curve"].push_back({f, g});
		j["thorp_range"] = m.thorp_range;
		j["turnaround"] = m.turnaround;
		j["rng_seed"] = m.rng_seed;
		return j.dump();
	}

	void load_cir_trace_text(const std::string &csv, ChannelModel &model)
	{
		std::istringstream in(csv);
		std::string line;
		if (!std::getline(in, line) || line.rfind("time,delay,gain_db,phase_deg", 0) != 0)
			throw ParameterError("cir trace: expected header time,delay,gain_db,phase_deg");
		// delay -> time -> gain
		std::map<double, std::map<double, cplx>> rows;
		int lineno = 1;
		while (std::getline(in, line)) {
			++lineno;
			if (line.empty() || line[0] == '#')
				continue;
			std::istringstream ls(line);
			double v[4];
			char comma;
			if (!(ls >> v[0] >> comma >> v[1] >> comma >> v[2] >> comma >> v[3]))
				throw ParameterError("cir trace: malformed line " + std::to_string(lineno));
			rows[v[1]][v[0]] = std::polar(std::pow(10.0, v[2] / 20), v[3] * std::numbers::pi / 180);
		}
		if (rows.empty())
			throw ParameterError("cir trace: no rows");
		TimeVaryingProfile p;
		for (const auto &[t, g] : rows.begin()->second) {
			(void)g;
			p.times.push_back(t);
		}
		model.taps.clear();
		for (const auto &[delay, traj] : rows) {
			if (traj.size() != p.times.size())
				throw ParameterError("cir trace: every delay needs a row at every time");
			model.taps.push_back({delay, 1.0});
			std::vector<cplx> g;
			for (std::size_t j = 0; j < p.times.size(); ++j) {
				const auto it = traj.find(p.times[j]);
				if (it == traj.end())
					throw ParameterError("cir trace: knot times differ between delays");
				g.push_back(it->second);
			}
			p.gains.push_back(std::move(g));
		}
		p.duration = p.times.back();
		model.profile = std::move(p);
		model.validate();
	}

	void load_cir_trace(const std::filesystem::path &path, ChannelModel &model)
	{
		std::ifstream in(path);
		if (!in)
			throw ParameterError("cannot open cir trace " + path.string());
		std::stringstream ss;
		ss << in.rdbuf();
		load_cir_trace_text(ss.str(), model);
	}

	// ---------------------------------------------------------------- medium

	HalfDuplexMedium::HalfDuplexMedium(ChannelModel model, double f_center, double sample_rate)
	    : model_(std::move(model)), fc_(f_center), fs_(sample_rate)
	{
		model_.validate();
		if (!(fs_ > 0))
			throw ParameterError("medium: sample rate must be positive");
	}

	int HalfDuplexMedium::add_endpoint(std::string name)
	{
		names_.push_back(std::move(name));
		return int(names_.size()) - 1;
	}

	void HalfDuplexMedium::transmit(int from, double start, const BasebandSignal &sig, std::string label)
	{
		if (from < 0 || std::size_t(from) >= names_.size())
			throw ParameterError("medium: unknown endpoint");
		if (sig.sample_rate != fs_)
			throw ParameterError("medium: waveform rate differs from the medium rate");
		Emission e;
		e.from = from;
		e.start = static_cast<Eigen::Index>(std::llround(start * fs_));
		e.tx_length = sig.size();
		for (const auto &[wave, out] : recent_)
			if (wave.size() == sig.size() && wave == sig.samples) {
				e.arrival = out;
				break;
			}
		if (!e.arrival) {
			e.arrival = std::make_shared<const CVec>(propagate_noiseless(sig, fc_, model_).samples);
			recent_.emplace_front(sig.samples, e.arrival);
			if (recent_.size() > 8)
				recent_.pop_back();
		}
		e.arrival_length = e.arrival->size();
		const double t0 = double(e.start) / fs_;
		const double t1 = double(e.start + e.tx_length) / fs_;
		emissions_.push_back(std::move(e));

		log_.push_back({t0, MediumEvent::Kind::TxStart, from, label});
		log_.push_back({t1, MediumEvent::Kind::TxEnd, from, label});
		std::stable_sort(log_.begin(), log_.end(), [](const MediumEvent &a, const MediumEvent &b) { return a.time < b.time; });
	}

	void HalfDuplexMedium::retire(double t)
	{
		const double k = t * fs_;
		for (Emission &e : emissions_)
			if (e.arrival && double(e.start + e.arrival_length) < k)
				e.arrival.reset();
	}

	bool HalfDuplexMedium::muted(int at, double t) const
	{
		const double k = t * fs_;
		const double hold = model_.turnaround * fs_;
		for (const Emission &e : emissions_)
			if (e.from == at && k >= double(e.start) && k < double(e.start + e.tx_length) + hold)
				return true;
		return false;
	}

	double HalfDuplexMedium::last_arrival_end(int at) const
	{
		double t = -std::numeric_limits<double>::infinity();
		for (const Emission &e : emissions_)
			if (e.from != at)
				t = std::max(t, double(e.start + e.arrival_length) / fs_);
		return t;
	}

	void HalfDuplexMedium::add_noise(CVec &out, int at, Eigen::Index first) const
	{
		const double var = baseband_noise_variance(model_, fs_);
		if (var > 0) {
			const Eigen::Index last = first + out.size();
			for (Eigen::Index b = first >= 0 ? first / kNoiseBlock : -((-first + kNoiseBlock - 1) / kNoiseBlock);
			     b * kNoiseBlock < last; ++b) {
				SplitMix64 rng(derive_seed(model_.rng_seed, std::uint64_t(at) + 1, std::uint64_t(b)));
				for (Eigen::Index k = b * kNoiseBlock; k < (b + 1) * kNoiseBlock; ++k) {
					const cplx z = rng.complex_normal(var);
					if (k >= first && k < last)
						out[k - first] += z;
				}
			}
		}
		SplitMix64 tones(derive_seed(model_.rng_seed, 0x7073ULL, std::uint64_t(at)));
		add_interferers(out, model_, fc_, fs_, first, tones);
	}

	CVec HalfDuplexMedium::arrivals(int at, Eigen::Index k0, Eigen::Index k1) const
	{
		CVec out = CVec::Zero(std::max<Eigen::Index>(k1 - k0, 0));
		for (const Emission &e : emissions_) {
			if (e.from == at || !e.arrival)
				continue;
			const Eigen::Index lo = std::max(k0, e.start), hi = std::min(k1, e.start + e.arrival_length);
			if (hi > lo)
				out.segment(lo - k0, hi - lo) += e.arrival->segment(lo - e.start, hi - lo);
		}
		return out;
	}

	void HalfDuplexMedium::mute(CVec &out, int at, Eigen::Index k0) const
	{
		const Eigen::Index k1 = k0 + out.size();
		const auto hold = static_cast<Eigen::Index>(std::llround(model_.turnaround * fs_));
		for (const Emission &e : emissions_) {
			if (e.from != at)
				continue;
			const Eigen::Index lo = std::max(k0, e.start), hi = std::min(k1, e.start + e.tx_length + hold);
			if (hi > lo)
				out.segment(lo - k0, hi - lo).setZero();
		}
	}

	BasebandSignal HalfDuplexMedium::receive(int at, double t0, double t1) const
	{
		const auto k0 = static_cast<Eigen::Index>(std::llround(t0 * fs_));
		const auto k1 = static_cast<Eigen::Index>(std::llround(t1 * fs_));
		CVec out = arrivals(at, k0, k1);
		if (out.size() == 0)
			return {out, fs_};
		add_noise(out, at, k0);
		mute(out, at, k0);
		return {out, fs_};
	}

	BasebandSignal HalfDuplexMedium::receive(int at, double t0, double t1, std::uint64_t noise_key) const
	{
		const auto k0 = static_cast<Eigen::Index>(std::llround(t0 * fs_));
		const auto k1 = static_cast<Eigen::Index>(std::llround(t1 * fs_));
		CVec out = arrivals(at, k0, k1);
		if (out.size() == 0)
			return {out, fs_};
		if (const double var = baseband_noise_variance(model_, fs_); var > 0) {
			SplitMix64 rng(derive_seed(model_.rng_seed, 0x6B6579ULL, noise_key));
			for (auto &v : out)
				v += rng.complex_normal(var);
		}
		SplitMix64 tones(derive_seed(model_.rng_seed, 0x7073ULL, std::uint64_t(at)));
		add_interferers(out, model_, fc_, fs_, k0, tones);
		mute(out, at, k0);
		return {out, fs_};
	}
} // namespace uam
