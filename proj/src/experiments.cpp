#include "uam/experiments.hpp"

#include "uam/dsp.hpp"
#include "uam/iq_file.hpp"
#include "uam/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <set>
#include <sstream>

namespace uam
{
	namespace
	{
		using nlohmann::json;
		using ojson = nlohmann::ordered_json;

		// stream ids for derive_seed
		constexpr std::uint64_t kPayload = 0x706179ULL, kNoise = 0x6E6F69ULL, kFile = 0x66696CULL, kLoss = 0x6C6F73ULL;

		Bits random_bits(std::size_t n, std::uint64_t seed)
		{
			SplitMix64 rng(seed);
			Bits b(n);
			for (std::size_t i = 0; i < n; i += 64) {
				const std::uint64_t w = rng();
				for (std::size_t j = 0; j < 64 && i + j < n; ++j)
					b[i + j] = std::uint8_t(w >> j & 1);
			}
			return b;
		}

		std::ostringstream csv_stream()
		{
			std::ostringstream out;
			out.precision(10);
			return out;
		}

		// The frame in 5 ms of silence either side, through the channel.
		BasebandSignal over_channel(const BasebandSignal &tx, double f_center, const ChannelModel &m)
		{
			const auto lead = Eigen::Index(std::llround(5e-3 * tx.sample_rate));
			CVec x = CVec::Zero(tx.size() + 2 * lead);
			x.segment(lead, tx.size()) = tx.samples;
			return propagate(BasebandSignal(x, tx.sample_rate), f_center, m);
		}

	} // namespace

	std::uint64_t fnv1a(const std::string &text)
	{
		std::uint64_t h = 0xCBF29CE484222325ULL;
		for (unsigned char c : text) {
			h ^= c;
			h *= 0x100000001B3ULL;
		}
		return h;
	}

	// ---------------------------------------------------------------- BER sweep

	std::vector<double> BerSweepSpec::grid() const
	{
		if (!(snr_step > 0) || snr_stop < snr_start)
			throw ParameterError("ber sweep: need snr_step > 0 and snr_stop >= snr_start");
		const auto n = static_cast<int>(std::floor((snr_stop - snr_start) / snr_step + 1e-9)) + 1;
		std::vector<double> g;
		for (int i = 0; i < n; ++i)
			g.push_back(snr_start + i * snr_step);
		return g;
	}

	BerSweepSpec BerSweepSpec::marina()
	{
		BerSweepSpec s;
		s.configs = {{"marina_50k_dbpsk", OfdmConfig::marina_50k_dbpsk()},
		             {"marina_100k_dbpsk", OfdmConfig::marina_100k_dbpsk()},
		             {"marina_100k_dqpsk", OfdmConfig::marina_100k_dqpsk()}};
		return s;
	}

	std::vector<BerPoint> run_ber_sweep(const BerSweepSpec &spec)
	{
		if (spec.configs.empty())
			throw ParameterError("ber sweep: no configurations");
		if (spec.max_frames < 1 || !(spec.reference_bandwidth > 0))
			throw ParameterError("ber sweep: max_frames and reference_bandwidth must be positive");
		spec.channel.validate();
		const auto grid = spec.grid();
		const double top = grid.back();
		ChannelModel base = spec.channel;
		base.noise_psd = noise_psd_for_snr(top, 1.0, spec.reference_bandwidth);

		std::vector<BerPoint> out;
		for (std::size_t ci = 0; ci < spec.configs.size(); ++ci) {
			const auto &[name, cfg] = spec.configs[ci];
			const OfdmTransceiver t(cfg);
			for (std::size_t pi = 0; pi < grid.size(); ++pi) {
				BerPoint pt;
				pt.config = name;
				pt.snr_db = grid[pi];
				pt.attenuation_db = top - grid[pi];
				ChannelModel m = base;
				m.attenuation_db += pt.attenuation_db;
				double est = 0;
				for (int f = 0; f < spec.max_frames && pt.bits < spec.min_bits; ++f) {
					const std::uint64_t key = (std::uint64_t(ci) << 40) | (std::uint64_t(pi) << 20) | std::uint64_t(f);
					const Bits b = random_bits(cfg.payload_bits(), derive_seed(spec.seed, kPayload, key));
					const BasebandSignal tx = t.transmit(b);
					if (f == 0)
						pt.snr_inband = snr_at_receiver(m, tx, cfg.f_center);
					m.rng_seed = derive_seed(spec.seed, kNoise, key);
					const RxResult r = t.receive(over_channel(tx, cfg.f_center, m), &b);
					++pt.frames;
					pt.bits += b.size();
					if (!r.diag.detected || r.bits.size() != b.size()) {
						pt.errors += b.size() / 2;
						continue;
					}
					++pt.detected;
					pt.errors += r.diag.bit_errors;
					est += r.diag.snr_estimate;
				}
				pt.snr_estimate = pt.detected ? est / pt.detected : 0.0;
				out.push_back(pt);
			}
		}
		return out;
	}

	std::string ber_sweep_csv(const std::vector<BerPoint> &points)
	{
		auto out = csv_stream();
		out << "config,snr_db,attenuation_db,snr_inband_db,frames,detected,bits,bit_errors,ber,snr_estimate_db\n";
		for (const auto &p : points)
			out << p.config << ',' << p.snr_db << ',' << p.attenuation_db << ',' << p.snr_inband << ',' << p.frames << ','
			    << p.detected << ',' << p.bits << ',' << p.errors << ',' << p.ber() << ',' << p.snr_estimate << '\n';
		return out.str();
	}

	// ---------------------------------------------------------------- high rate

	HighRateResult run_high_rate(const HighRateSpec &spec)
	{
		spec.ofdm.validate();
		spec.code.validate();
		if (spec.frames < 1)
			throw ParameterError("high-rate: frames must be >= 1");
		ChannelModel m = spec.channel;
		if (m.noise_psd == 0 && std::isfinite(spec.snr_db))
			m.noise_psd = noise_psd_for_snr(spec.snr_db, 1.0, spec.ofdm.bandwidth);
		m.validate();

		HighRateResult res;
		res.raw_rate = compute_data_rate(spec.ofdm, 1.0);
		res.coded_rate = compute_data_rate(spec.ofdm, 0.5);
		const OfdmTransceiver t(spec.ofdm);
		const std::size_t coded = spec.ofdm.payload_bits(), info = spec.code.info_length(coded);
		const Interleaver il({coded, derive_seed(spec.seed, kPayload, ~0ULL)});
		ViterbiDecoder dec(spec.code);
		for (int f = 0; f < spec.frames; ++f) {
			const Bits msg = random_bits(info, derive_seed(spec.seed, kPayload, std::uint64_t(f)));
			Bits cw = conv_encode(msg, spec.code);
			cw.resize(coded, 0);
			const Bits tx = il.interleave(cw);
			m.rng_seed = derive_seed(spec.seed, kNoise, std::uint64_t(f));
			const RxResult r = t.receive(over_channel(t.transmit(tx), spec.ofdm.f_center, m), &tx);
			++res.frames;
			res.raw_bits += coded;
			res.info_bits += info;
			if (!r.diag.detected || std::size_t(r.llr.size()) != coded) {
				res.raw_errors += coded / 2;
				res.info_errors += info / 2;
				++res.frame_errors;
				continue;
			}
			++res.detected;
			res.raw_errors += r.diag.bit_errors;
			const RVec llr = il.deinterleave(r.llr);
			const Bits got = dec.decode(llr.head(Eigen::Index(spec.code.coded_length(info))));
			std::size_t wrong = 0;
			for (std::size_t i = 0; i < info; ++i)
				wrong += (got[i] ^ msg[i]) & 1;
			res.info_errors += wrong;
			res.frame_errors += wrong > 0;
		}
		return res;
	}

	std::string high_rate_csv(const HighRateResult &r)
	{
		auto out = csv_stream();
		out << "raw_rate,coded_rate,frames,detected,frame_errors,raw_bits,raw_errors,raw_ber,info_bits,info_errors,coded_ber\n";
		out << r.raw_rate << ',' << r.coded_rate << ',' << r.frames << ',' << r.detected << ',' << r.frame_errors << ','
		    << r.raw_bits << ',' << r.raw_errors << ',' << (r.raw_bits ? double(r.raw_errors) / double(r.raw_bits) : 0.0)
		    << ',' << r.info_bits << ',' << r.info_errors << ','
		    << (r.info_bits ? double(r.info_errors) / double(r.info_bits) : 0.0) << '\n';
		return out.str();
	}

	// ---------------------------------------------------------------- ARQ

	ChannelModel ArqSweepSpec::default_channel()
	{
		ChannelModel m = ChannelModel::marina();
		m.attenuation_db = 22.0;
		return m;
	}

	std::vector<ArqPoint> run_arq_sweep(const ArqSweepSpec &spec)
	{
		spec.arq.validate();
		if (spec.packet_sizes.empty())
			throw ParameterError("arq: no packet sizes");
		if (spec.forced_loss && !(*spec.forced_loss >= 0 && *spec.forced_loss < 1))
			throw ParameterError("arq: forced_loss must be in [0, 1)");
		Bytes data(spec.file_bytes);
		SplitMix64 rng(derive_seed(spec.seed, kFile));
		for (auto &b : data)
			b = std::uint8_t(rng() & 0xFF);

		std::vector<ArqPoint> out;
		for (std::size_t size : spec.packet_sizes) {
			ArqConfig c = spec.arq;
			c.packet_size = size;
			c.validate();
			// the same noise (or loss) stream for every size
			std::unique_ptr<FrameLink> link;
			if (spec.forced_loss) {
				link = std::make_unique<IdealLink>(*spec.forced_loss, derive_seed(spec.seed, kLoss), spec.forward, spec.feedback,
				                                   spec.channel.propagation_delay(), spec.channel.turnaround);
			} else {
				ChannelModel m = spec.channel;
				m.rng_seed = derive_seed(spec.seed, kNoise);
				link = std::make_unique<WaveformLink>(m, spec.forward, spec.feedback);
			}
			ArqPoint pt;
			pt.packet_size = size;
			try {
				const ArqTransfer t = arq_send_file(data, c, *link);
				pt.stats = t.stats;
				pt.delivered = t.received == data;
			} catch (const DeliveryFailure &e) {
				pt.stats = e.partial.stats;
			}
			out.push_back(pt);
		}
		return out;
	}

	std::string arq_csv(const std::vector<ArqPoint> &points)
	{
		auto out = csv_stream();
		out << "packet_size,delivered,packets,packets_sent,retransmissions,transmissions_per_packet,acks,nacks,timeouts,"
		       "delivered_bytes,elapsed,goodput\n";
		for (const auto &p : points) {
			const LinkStats &s = p.stats;
			out << p.packet_size << ',' << int(p.delivered) << ',' << s.packets << ',' << s.packets_sent << ','
			    << s.retransmissions << ',' << s.transmissions_per_packet() << ',' << s.acks << ',' << s.nacks << ','
			    << s.timeouts << ',' << s.delivered_bytes << ',' << s.elapsed << ',' << s.goodput << '\n';
		}
		return out.str();
	}

	// ---------------------------------------------------------------- probes

	CirEstimate run_cir_probe(const CirProbeSpec &spec)
	{
		if (spec.pulses < 1)
			throw ParameterError("probe-cir: pulses must be >= 1");
		ChannelModel m = spec.channel;
		m.rng_seed = derive_seed(spec.seed, kNoise);
		const BasebandSignal pn = pn_pulse(spec.sequence, spec.chip_rate);
		const BasebandSignal rx = propagate(pulse_train(pn, spec.pulse_period, spec.pulses), spec.f_center, m);
		return estimate_cir(rx, pn, spec.pulse_period);
	}

	std::string cir_csv(const CirEstimate &cir)
	{
		auto out = csv_stream();
		out << "time,lag,magnitude,valid\n";
		for (Eigen::Index s = 0; s < cir.snapshots(); ++s)
			for (Eigen::Index k = 0; k < cir.lags.size(); ++k)
				out << cir.times[s] << ',' << cir.lags[k] << ',' << cir.magnitude(s, k) << ','
				    << int(cir.valid[std::size_t(s)]) << '\n';
		return out.str();
	}

	std::string cir_peaks_csv(const CirEstimate &cir, double peak_threshold)
	{
		auto out = csv_stream();
		out << "snapshot,time,index,lag,magnitude,relative_db\n";
		for (Eigen::Index s = 0; s < cir.snapshots(); ++s) {
			if (!cir.valid[std::size_t(s)])
				continue;
			const auto peaks = cir_peaks(cir, s, peak_threshold);
			for (const CirPeak &p : peaks)
				out << s << ',' << cir.times[s] << ',' << p.index << ',' << p.lag << ',' << p.magnitude << ','
				    << 20 * std::log10(p.magnitude) << '\n';
		}
		return out.str();
	}

	FrequencyResponse run_freq_probe(const FreqProbeSpec &spec)
	{
		if (spec.repetitions < 1)
			throw ParameterError("probe-freq: repetitions must be >= 1");
		ChannelModel m = spec.channel;
		m.rng_seed = derive_seed(spec.seed, kNoise);
		const BasebandSignal one = generate_lfm(spec.lfm, spec.sample_rate);
		// one extra leading repetition fills the multipath tail before measuring
		const Eigen::Index ns = one.size();
		CVec train(ns * (spec.repetitions + 1));
		for (int r = 0; r <= spec.repetitions; ++r)
			train.segment(r * ns, ns) = one.samples;
		const BasebandSignal rx = propagate(BasebandSignal(train, spec.sample_rate), spec.f_center, m);
		const BasebandSignal steady(CVec(rx.samples.segment(ns, ns * spec.repetitions)), spec.sample_rate);
		return measure_frequency_response(steady, spec.lfm, spec.repetitions, spec.f_center);
	}

	std::string freq_csv(const FrequencyResponse &fr)
	{
		auto out = csv_stream();
		out << "frequency,power_db\n";
		for (Eigen::Index k = 0; k < fr.frequencies.size(); ++k)
			out << fr.frequencies[k] << ',' << fr.power_db[k] << '\n';
		return out.str();
	}

	// ---------------------------------------------------------------- loopback and streaming

	std::string run_loopback_csv(const LoopbackSpec &spec)
	{
		if (spec.frames < 1)
			throw ParameterError("loopback: frames must be >= 1");
		const OfdmTransceiver t(spec.ofdm);
		ChannelModel m = spec.channel;
		auto out = csv_stream();
		out << "frame,detected,bits,bit_errors,ber,snr_estimate_db,doppler_scale,timing_offset\n";
		for (int f = 0; f < spec.frames; ++f) {
			const Bits b = random_bits(spec.ofdm.payload_bits(), derive_seed(spec.seed, kPayload, std::uint64_t(f)));
			m.rng_seed = derive_seed(spec.seed, kNoise, std::uint64_t(f));
			const RxResult r = t.receive(over_channel(t.transmit(b), spec.ofdm.f_center, m), &b);
			out << f << ',' << int(r.diag.detected) << ',' << b.size() << ',' << r.diag.bit_errors << ',' << r.diag.ber
			    << ',' << r.diag.snr_estimate << ',' << r.diag.doppler_scale << ',' << r.diag.timing_offset << '\n';
		}
		return out.str();
	}

	void stream_tx(const std::filesystem::path &in, const std::filesystem::path &out, const StreamSpec &spec)
	{
		const IqRecording rec = read_iq(in);
		if (rec.meta.domain != "baseband")
			throw IoError(in.string() + ": stream-tx takes a baseband recording");
		const double fs = spec.medium_rate > 0 ? spec.medium_rate : rec.signal.sample_rate;
		const double fc = spec.medium_center > 0 ? spec.medium_center : rec.meta.center_frequency;
		BasebandSignal sig = fs == rec.signal.sample_rate ? rec.signal : change_rate(rec.signal, fs);
		const double shift = rec.meta.center_frequency - fc;
		if (shift != 0) {
			if (std::abs(shift) + 0.5 * rec.signal.sample_rate > 0.5 * fs)
				throw ParameterError("stream-tx: the recording does not fit the medium band");
			for (Eigen::Index n = 0; n < sig.size(); ++n)
				sig.samples[n] *= oscillator(shift, fs, n);
		}
		write_iq(out, sig, fc);
	}

	void stream_rx(const std::filesystem::path &in, const std::filesystem::path &out, const StreamSpec &spec)
	{
		const IqRecording rec = read_iq(in);
		if (rec.meta.domain != "baseband")
			throw IoError(in.string() + ": stream-rx takes a baseband medium recording");
		ChannelModel m = spec.channel;
		m.rng_seed = derive_seed(spec.seed, kNoise);
		HalfDuplexMedium medium(m, rec.meta.center_frequency, rec.signal.sample_rate);
		const int tx = medium.add_endpoint("streamer"), rx = medium.add_endpoint("recorder");
		medium.transmit(tx, 0.0, rec.signal, "stream");
		const double end = double(rec.signal.size()) / rec.signal.sample_rate * m.doppler_scale + m.max_delay();
		write_iq(out, medium.receive(rx, 0.0, end), rec.meta.center_frequency);
	}

	// ---------------------------------------------------------------- configuration

	namespace
	{
		/// Key reader that remembers what was asked for, so leftovers are unknown keys.
		class Reader
		{
		public:
			Reader(json j, std::string where) : j_(std::move(j)), where_(std::move(where))
			{
				if (!j_.is_object())
					throw ParameterError(where_ + ": expected an object");
			}

			bool has(const char *key)
			{
				used_.insert(key);
				return j_.contains(key);
			}

			template <typename T>
			T get(const char *key, T fallback)
			{
				if (!has(key))
					return fallback;
				try {
					return j_.at(key).get<T>();
				} catch (const json::exception &e) {
					throw ParameterError(where_ + "." + key + ": " + e.what());
				}
			}

			const json &at(const char *key)
			{
				used_.insert(key);
				return j_.at(key);
			}

			void finish() const
			{
				for (const auto &[k, v] : j_.items()) {
					(void)v;
					if (!used_.count(k))
						throw ParameterError(where_ + ": unknown key '" + k + "'");
				}
			}

		private:
			json j_;
			std::string where_;
			std::set<std::string> used_;
		};

		OfdmConfig ofdm_preset(const std::string &name)
		{
			if (name == "marina_50k_dbpsk")
				return OfdmConfig::marina_50k_dbpsk();
			if (name == "marina_100k_dbpsk")
				return OfdmConfig::marina_100k_dbpsk();
			if (name == "marina_100k_dqpsk")
				return OfdmConfig::marina_100k_dqpsk();
			if (name == "high_rate")
				return OfdmConfig::high_rate();
			throw ParameterError("ofdm: unknown preset '" + name + "'");
		}

		ojson ofdm_to_json(const OfdmConfig &c)
		{
			std::string roles;
			for (SubcarrierRole r : c.subcarrier_map)
				roles.push_back(r == SubcarrierRole::Data ? 'D' : r == SubcarrierRole::Pilot ? 'P' : 'N');
			char map_hash[17];
			std::snprintf(map_hash, sizeof map_hash, "%016llx", static_cast<unsigned long long>(fnv1a(roles)));
			ojson j;
			j["n_subcarriers"] = c.n_subcarriers;
			j["bandwidth"] = c.bandwidth;
			j["f_center"] = c.f_center;
			j["guard_time"] = c.guard_time;
			j["preamble_guard_time"] = c.preamble_guard_time;
			j["inter_frame_gap"] = c.inter_frame_gap;
			j["modulation"] = to_string(c.modulation);
			j["blocks_per_frame"] = c.blocks_per_frame;
			j["preamble"] = to_string(c.preamble.kind);
			j["preamble_degree"] = c.preamble.sequence.degree;
			j["tx_gain"] = c.tx_gain;
			j["detection_threshold"] = c.detection_threshold;
			j["doppler_min"] = c.doppler_min;
			j["doppler_max"] = c.doppler_max;
			j["data_subcarriers"] = c.count(SubcarrierRole::Data);
			j["pilot_subcarriers"] = c.count(SubcarrierRole::Pilot);
			j["map_hash"] = map_hash;
			return j;
		}

		OfdmConfig ofdm_from_json(const json &j, const std::string &fallback)
		{
			if (j.is_string())
				return ofdm_preset(j.get<std::string>());
			Reader r(j, "ofdm");
			OfdmConfig c = ofdm_preset(r.get<std::string>("preset", fallback));
			if (r.has("n_subcarriers")) {
				c.n_subcarriers = r.get("n_subcarriers", c.n_subcarriers);
				c.subcarrier_map = default_subcarrier_map(c.n_subcarriers);
			}
			c.bandwidth = r.get("bandwidth", c.bandwidth);
			c.f_center = r.get("f_center", c.f_center);
			c.guard_time = r.get("guard_time", c.guard_time);
			c.preamble_guard_time = r.get("preamble_guard_time", c.preamble_guard_time);
			c.inter_frame_gap = r.get("inter_frame_gap", c.inter_frame_gap);
			c.blocks_per_frame = r.get("blocks_per_frame", c.blocks_per_frame);
			c.tx_gain = r.get("tx_gain", c.tx_gain);
			c.detection_threshold = r.get("detection_threshold", c.detection_threshold);
			c.doppler_min = r.get("doppler_min", c.doppler_min);
			c.doppler_max = r.get("doppler_max", c.doppler_max);
			if (r.has("modulation")) {
				const auto m = r.get<std::string>("modulation", "");
				if (m != "DBPSK" && m != "DQPSK")
					throw ParameterError("ofdm.modulation: expected DBPSK or DQPSK, got '" + m + "'");
				c.modulation = m == "DQPSK" ? Modulation::DQPSK : Modulation::DBPSK;
			}
			r.finish();
			c.validate();
			return c;
		}

		ChannelModel channel_from(Reader &r, const ChannelModel &fallback)
		{
			if (r.has("channel_file")) {
				if (r.has("channel"))
					throw ParameterError("give either channel or channel_file, not both");
				return load_channel_model(r.get<std::string>("channel_file", ""));
			}
			if (!r.has("channel"))
				return fallback;
			json c = r.at("channel");
			if (c.is_object() && !c.contains("schema_version"))
				c["schema_version"] = 1;
			return channel_model_from_json(c.dump());
		}

		ojson channel_echo(const ChannelModel &m) { return ojson::parse(channel_model_to_json(m)); }

		/// Noise override as the SNR of unit power over `bandwidth`.
		void apply_snr(Reader &r, ChannelModel &m, double bandwidth)
		{
			if (r.has("snr_db"))
				m.noise_psd = noise_psd_for_snr(r.get("snr_db", 0.0), 1.0, bandwidth);
		}

		struct Parsed
		{
			std::string verb;
			ojson resolved;
			std::uint64_t seed = 0;
			json root;
		};

		const std::vector<std::string> &verbs()
		{
			static const std::vector<std::string> v{"ber-sweep", "high-rate", "rate-adapt", "arq", "probe-cir",
			                                        "probe-freq", "stream-tx", "stream-rx", "loopback"};
			return v;
		}

		Parsed parse_root(const std::string &verb, const std::string &text, std::optional<std::uint64_t> seed, Reader *&reader,
		                  std::unique_ptr<Reader> &holder)
		{
			if (std::find(verbs().begin(), verbs().end(), verb) == verbs().end())
				throw ParameterError("unknown experiment '" + verb + "'");
			Parsed p;
			p.verb = verb;
			try {
				p.root = text.empty() ? json::object() : json::parse(text);
			} catch (const json::parse_error &e) {
				throw ParameterError(std::string("config: ") + e.what());
			}
			holder = std::make_unique<Reader>(p.root, "config");
			reader = holder.get();
			Reader &r = *reader;
			if (!text.empty() && r.get("schema_version", 0) != 1)
				throw ParameterError("config: schema_version must be 1");
			if (r.has("experiment") && r.get<std::string>("experiment", "") != verb)
				throw ParameterError("config: experiment '" + r.get<std::string>("experiment", "") + "' does not match verb '" + verb + "'");
			if (seed)
				p.seed = *seed;
			else if (r.has("seed"))
				p.seed = r.get<std::uint64_t>("seed", 0);
			else
				throw ParameterError("a seed is required: pass --seed or set \"seed\" in the config");
			r.has("seed"); // a config seed overridden by --seed is still a known key
			p.resolved["schema_version"] = 1;
			p.resolved["experiment"] = verb;
			p.resolved["seed"] = p.seed;
			return p;
		}

		template <typename T>
		std::vector<T> list(Reader &r, const char *key, std::vector<T> fallback)
		{
			return r.get(key, fallback);
		}

		struct Job
		{
			Parsed parsed;
			std::function<ExperimentOutput()> run;
		};

		Job build(const std::string &verb, const std::string &text, std::optional<std::uint64_t> seed)
		{
			Reader *rp = nullptr;
			std::unique_ptr<Reader> holder;
			Job job;
			job.parsed = parse_root(verb, text, seed, rp, holder);
			Reader &r = *rp;
			ojson &res = job.parsed.resolved;
			const std::uint64_t s = job.parsed.seed;

			if (verb == "ber-sweep") {
				BerSweepSpec spec = BerSweepSpec::marina();
				spec.seed = s;
				if (r.has("configs")) {
					spec.configs.clear();
					for (const auto &c : r.at("configs")) {
						if (!c.is_object() || !c.contains("name"))
							throw ParameterError("ber-sweep.configs: each entry needs a name");
						json body = c;
						const std::string name = body.at("name").get<std::string>();
						body.erase("name");
						spec.configs.emplace_back(name, ofdm_from_json(body, name));
					}
				}
				spec.channel = channel_from(r, spec.channel);
				spec.snr_start = r.get("snr_start", spec.snr_start);
				spec.snr_stop = r.get("snr_stop", spec.snr_stop);
				spec.snr_step = r.get("snr_step", spec.snr_step);
				spec.reference_bandwidth = r.get("reference_bandwidth", spec.reference_bandwidth);
				spec.min_bits = r.get("min_bits", spec.min_bits);
				spec.max_frames = r.get("max_frames", spec.max_frames);
				spec.grid();
				res["configs"] = ojson::array();
				for (const auto &[name, c] : spec.configs) {
					ojson e = ofdm_to_json(c);
					e["name"] = name;
					res["configs"].push_back(e);
				}
				res["channel"] = channel_echo(spec.channel);
				res["snr_start"] = spec.snr_start;
				res["snr_stop"] = spec.snr_stop;
				res["snr_step"] = spec.snr_step;
				res["reference_bandwidth"] = spec.reference_bandwidth;
				res["min_bits"] = spec.min_bits;
				res["max_frames"] = spec.max_frames;
				job.run = [spec] { return ExperimentOutput{ber_sweep_csv(run_ber_sweep(spec)), {}}; };
			} else if (verb == "high-rate") {
				HighRateSpec spec;
				spec.seed = s;
				if (r.has("ofdm"))
					spec.ofdm = ofdm_from_json(r.at("ofdm"), "high_rate");
				spec.channel = channel_from(r, spec.channel);
				spec.snr_db = r.get("snr_db", spec.snr_db);
				spec.frames = r.get("frames", spec.frames);
				res["ofdm"] = ofdm_to_json(spec.ofdm);
				res["channel"] = channel_echo(spec.channel);
				res["snr_db"] = spec.snr_db;
				res["frames"] = spec.frames;
				job.run = [spec] { return ExperimentOutput{high_rate_csv(run_high_rate(spec)), {}}; };
			} else if (verb == "rate-adapt") {
				RateAdaptExperiment ex;
				ex.seed = s;
				if (r.has("ofdm"))
					ex.ofdm = ofdm_from_json(r.at("ofdm"), "high_rate");
				const bool given = r.has("channel") || r.has("channel_file");
				ex.channel = channel_from(r, RateAdaptExperiment::notch_channel(r.get("notch_snr_db", 13.0), r.get("tilt_db", 20.0)));
				if (given && (r.has("notch_snr_db") || r.has("tilt_db")))
					throw ParameterError("rate-adapt: notch_snr_db and tilt_db shape the built-in channel only");
				ex.training_packets = r.get("training_packets", ex.training_packets);
				ex.test_packets = r.get("test_packets", ex.test_packets);
				ex.groups = r.get("groups", ex.groups);
				ex.target_rates = list(r, "target_rates", ex.target_rates);
				ex.validate();
				res["ofdm"] = ofdm_to_json(ex.ofdm);
				res["channel"] = channel_echo(ex.channel);
				res["training_packets"] = ex.training_packets;
				res["test_packets"] = ex.test_packets;
				res["groups"] = ex.groups;
				res["target_rates"] = ex.target_rates;
				job.run = [ex] {
					const RateAdaptResult rr = run_rate_adaptation(ex);
					std::ostringstream a, b, c;
					write_rate_adapt_csv(a, rr);
					write_error_profile_csv(b, rr.profile);
					write_selection_map_csv(c, rr, ex);
					return ExperimentOutput{a.str(), {{"_profile", b.str()}, {"_selection", c.str()}}};
				};
			} else if (verb == "arq") {
				ArqSweepSpec spec;
				spec.seed = s;
				spec.channel = channel_from(r, spec.channel);
				spec.packet_sizes = list(r, "packet_sizes", spec.packet_sizes);
				spec.file_bytes = r.get("file_bytes", spec.file_bytes);
				spec.arq.timeout = r.get("timeout", spec.arq.timeout);
				spec.arq.max_retries = r.get("max_retries", spec.arq.max_retries);
				spec.arq.max_elapsed = r.get("max_elapsed", spec.arq.max_elapsed);
				if (r.has("forced_loss"))
					spec.forced_loss = r.get("forced_loss", 0.0);
				spec.arq.validate();
				res["channel"] = channel_echo(spec.channel);
				res["packet_sizes"] = spec.packet_sizes;
				res["file_bytes"] = spec.file_bytes;
				res["timeout"] = spec.arq.timeout;
				res["max_retries"] = spec.arq.max_retries;
				res["max_elapsed"] = spec.arq.max_elapsed;
				res["forced_loss"] = spec.forced_loss ? ojson(*spec.forced_loss) : ojson(nullptr);
				job.run = [spec] { return ExperimentOutput{arq_csv(run_arq_sweep(spec)), {}}; };
			} else if (verb == "probe-cir") {
				CirProbeSpec spec;
				spec.seed = s;
				spec.channel = channel_from(r, spec.channel);
				spec.sequence = MSequenceSpec::standard(r.get("sequence_degree", spec.sequence.degree));
				spec.chip_rate = r.get("chip_rate", spec.chip_rate);
				spec.f_center = r.get("f_center", spec.f_center);
				spec.pulse_period = r.get("pulse_period", spec.pulse_period);
				spec.pulses = r.get("pulses", spec.pulses);
				spec.peak_threshold = r.get("peak_threshold", spec.peak_threshold);
				apply_snr(r, spec.channel, spec.chip_rate);
				res["channel"] = channel_echo(spec.channel);
				res["sequence_degree"] = spec.sequence.degree;
				res["chip_rate"] = spec.chip_rate;
				res["f_center"] = spec.f_center;
				res["pulse_period"] = spec.pulse_period;
				res["pulses"] = spec.pulses;
				res["peak_threshold"] = spec.peak_threshold;
				job.run = [spec] {
					const CirEstimate cir = run_cir_probe(spec);
					return ExperimentOutput{cir_csv(cir), {{"_peaks", cir_peaks_csv(cir, spec.peak_threshold)}}};
				};
			} else if (verb == "probe-freq") {
				FreqProbeSpec spec;
				spec.seed = s;
				spec.channel = channel_from(r, spec.channel);
				spec.lfm.f_start = r.get("f_start", spec.lfm.f_start);
				spec.lfm.f_end = r.get("f_end", spec.lfm.f_end);
				spec.lfm.duration = r.get("duration", spec.lfm.duration);
				spec.sample_rate = r.get("sample_rate", spec.sample_rate);
				spec.f_center = r.get("f_center", spec.f_center);
				spec.repetitions = r.get("repetitions", spec.repetitions);
				apply_snr(r, spec.channel, spec.sample_rate);
				res["channel"] = channel_echo(spec.channel);
				res["f_start"] = spec.lfm.f_start;
				res["f_end"] = spec.lfm.f_end;
				res["duration"] = spec.lfm.duration;
				res["sample_rate"] = spec.sample_rate;
				res["f_center"] = spec.f_center;
				res["repetitions"] = spec.repetitions;
				job.run = [spec] { return ExperimentOutput{freq_csv(run_freq_probe(spec)), {}}; };
			} else if (verb == "loopback") {
				LoopbackSpec spec;
				spec.seed = s;
				if (r.has("ofdm"))
					spec.ofdm = ofdm_from_json(r.at("ofdm"), "marina_100k_dbpsk");
				spec.channel = channel_from(r, spec.channel);
				spec.frames = r.get("frames", spec.frames);
				apply_snr(r, spec.channel, spec.ofdm.bandwidth);
				res["ofdm"] = ofdm_to_json(spec.ofdm);
				res["channel"] = channel_echo(spec.channel);
				res["frames"] = spec.frames;
				job.run = [spec] { return ExperimentOutput{run_loopback_csv(spec), {}}; };
			} else {
				StreamSpec spec;
				spec.seed = s;
				spec.channel = channel_from(r, spec.channel);
				spec.medium_rate = r.get("medium_rate", spec.medium_rate);
				spec.medium_center = r.get("medium_center", spec.medium_center);
				res["channel"] = channel_echo(spec.channel);
				res["medium_rate"] = spec.medium_rate;
				res["medium_center"] = spec.medium_center;
				job.run = [] () -> ExperimentOutput { throw ParameterError("stream verbs move files; use stream_tx / stream_rx"); };
			}
			r.finish();
			return job;
		}

		std::string header(const Parsed &p)
		{
			char hash[17];
			std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(p.resolved.dump())));
			return "# experiment=" + p.verb + "\n# config_hash=" + hash + "\n";
		}
	} // namespace

	ExperimentOutput run_experiment(const std::string &verb, const std::string &config, std::optional<std::uint64_t> seed)
	{
		Job job = build(verb, config, seed);
		ExperimentOutput out = job.run();
		const std::string h = header(job.parsed);
		out.main = h + out.main;
		for (auto &[suffix, text] : out.extra)
			text = h + text;
		return out;
	}

	std::string resolve_experiment(const std::string &verb, const std::string &config, std::optional<std::uint64_t> seed)
	{
		return build(verb, config, seed).parsed.resolved.dump(2);
	}

	StreamSpec parse_stream_spec(const std::string &config, std::optional<std::uint64_t> seed)
	{
		Reader *rp = nullptr;
		std::unique_ptr<Reader> holder;
		Parsed p = parse_root("stream-tx", config, seed, rp, holder);
		Reader &r = *rp;
		StreamSpec spec;
		spec.seed = p.seed;
		spec.channel = channel_from(r, spec.channel);
		spec.medium_rate = r.get("medium_rate", spec.medium_rate);
		spec.medium_center = r.get("medium_center", spec.medium_center);
		r.finish();
		return spec;
	}
} // namespace uam
