#include "uam/rate_adapt.hpp"

#include "uam/iq_file.hpp"
#include "uam/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace uam
{
	namespace
	{
		constexpr std::uint64_t kTrainPayload = 0x747270ULL, kTrainNoise = 0x74726EULL;
		constexpr std::uint64_t kTestPayload = 0x747370ULL, kTestNoise = 0x74736EULL;
		constexpr std::uint64_t kInterleaverSeed = 0x52414954ULL;

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

		// Objective summed in ascending order so equal multisets give equal bits.
		double selection_objective(const GroupProfile &gp, const std::vector<std::uint8_t> &s)
		{
			std::vector<double> v;
			for (int g = 0; g < gp.G; ++g)
				if (s[std::size_t(g)])
					v.push_back(gp.P[g]);
			std::sort(v.begin(), v.end());
			return std::accumulate(v.begin(), v.end(), 0.0);
		}

		std::ofstream open_out(const std::filesystem::path &path)
		{
			std::ofstream out(path, std::ios::trunc);
			if (!out)
				throw IoError("cannot open " + path.string() + " for writing");
			return out;
		}

		std::vector<std::pair<long, double>> read_pairs(const std::filesystem::path &path, const std::string &header)
		{
			std::ifstream in(path);
			if (!in)
				throw IoError("cannot open " + path.string());
			std::string line;
			if (!std::getline(in, line) || line != header)
				throw IoError(path.string() + ": expected header '" + header + "'");
			std::vector<std::pair<long, double>> rows;
			while (std::getline(in, line)) {
				if (line.empty())
					continue;
				std::istringstream ss(line);
				long i;
				char comma;
				double v;
				if (!(ss >> i >> comma >> v) || comma != ',')
					throw IoError(path.string() + ": malformed row '" + line + "'");
				if (i != long(rows.size()))
					throw IoError(path.string() + ": rows out of order at '" + line + "'");
				rows.emplace_back(i, v);
			}
			return rows;
		}

		ChannelModel keyed(ChannelModel m, std::uint64_t seed) { m.rng_seed = seed; return m; }

		// Frame in silence, through the channel, as the receiver hears it.
		BasebandSignal over_channel(const BasebandSignal &tx, const OfdmConfig &c, const ChannelModel &m)
		{
			const auto lead = Eigen::Index(std::llround(5e-3 * c.bandwidth));
			CVec x = CVec::Zero(tx.size() + 2 * lead);
			x.segment(lead, tx.size()) = tx.samples;
			return propagate(BasebandSignal(x, tx.sample_rate), c.f_center, m);
		}
	} // namespace

	RVec SubcarrierErrorProfile::recompute() const
	{
		RVec p = RVec::Zero(K);
		const double denom = double(packets) * double(blocks);
		for (int k = 0; k < K; ++k) {
			long sum = 0;
			for (int p_ = 0; p_ < packets; ++p_)
				for (int b = 0; b < blocks; ++b)
					sum += errors(k, p_, b);
			p[k] = denom > 0 ? double(sum) / denom : 0.0;
		}
		return p;
	}

	SubcarrierErrorProfile estimate_error_profile(const std::vector<Bits> &tx, const std::vector<Bits> &rx,
	                                              const OfdmConfig &config, int packets, int blocks)
	{
		config.validate();
		if (packets < 1 || blocks < 1)
			throw ParameterError("estimate_error_profile: packets and blocks must be >= 1");
		if (tx.size() != std::size_t(packets) || rx.size() != std::size_t(packets))
			throw ParameterError("estimate_error_profile: expected " + std::to_string(packets) + " packets");
		const auto data = config.data_indices();
		const int K = int(data.size()), bps = config.bits_per_symbol();
		const std::size_t per_packet = std::size_t(blocks) * std::size_t(K) * std::size_t(bps);

		SubcarrierErrorProfile prof;
		prof.K = K;
		prof.packets = packets;
		prof.blocks = blocks;
		prof.bits_per_symbol = bps;
		prof.counts.assign(std::size_t(K) * packets * blocks, 0);
		for (int p = 0; p < packets; ++p) {
			const Bits &t = tx[std::size_t(p)], &r = rx[std::size_t(p)];
			if (t.size() != per_packet || r.size() != per_packet)
				throw ParameterError("estimate_error_profile: packet " + std::to_string(p) + " holds " +
				                     std::to_string(t.size()) + "/" + std::to_string(r.size()) + " bits, expected " +
				                     std::to_string(per_packet));
			std::size_t bit = 0;
			for (int b = 0; b < blocks; ++b)
				for (int k = 0; k < K; ++k)
					for (int j = 0; j < bps; ++j, ++bit)
						if ((t[bit] ^ r[bit]) & 1)
							++prof.counts[(std::size_t(k) * packets + p) * blocks + b];
		}
		prof.p_hat = prof.recompute();
		return prof;
	}

	GroupProfile group_profile(const SubcarrierErrorProfile &profile, int G)
	{
		const int K = int(profile.p_hat.size());
		if (G < 1 || K % G != 0)
			throw ParameterError("group_profile: G = " + std::to_string(G) + " does not divide K = " + std::to_string(K));
		GroupProfile gp;
		gp.G = G;
		gp.group_size = K / G;
		gp.P = RVec(G);
		for (int g = 0; g < G; ++g)
			gp.P[g] = profile.p_hat.segment(gp.first(g), gp.group_size).sum();
		return gp;
	}

	int SelectionVector::selected() const { return int(std::count(s.begin(), s.end(), 1)); }

	int required_groups(double R, int G, double T_P, double N_D, int N_B)
	{
		if (!(R >= 0))
			throw ParameterError("solve_selection: R must be >= 0");
		if (G < 1 || !(T_P > 0) || !(N_D > 0) || N_B < 1)
			throw ParameterError("solve_selection: G, T_P, N_D and N_B must be positive");
		const double bound = R * G * T_P / (N_D * N_B);
		// bounds that are integers up to rounding must not force one group more
		const double m = std::ceil(bound - 1e-9 * std::max(1.0, bound));
		if (m > G) {
			const double max_rate = N_D * N_B / T_P;
			throw InfeasibleRate("solve_selection: " + std::to_string(R) + " bit/s needs " + std::to_string(int(m)) +
			                         " of " + std::to_string(G) + " groups; at most " + std::to_string(max_rate) +
			                         " bit/s is achievable",
			                     max_rate);
		}
		return std::max(0, int(m));
	}

	SelectionVector solve_selection(const GroupProfile &gp, double R, double T_P, double N_D, int N_B)
	{
		if (gp.G != gp.P.size())
			throw ParameterError("solve_selection: group profile size mismatch");
		SelectionVector sel;
		sel.required = required_groups(R, gp.G, T_P, N_D, N_B);
		std::vector<int> order(std::size_t(gp.G));
		std::iota(order.begin(), order.end(), 0);
		std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return gp.P[a] < gp.P[b]; });
		sel.s.assign(std::size_t(gp.G), 0);
		for (int i = 0; i < sel.required; ++i)
			sel.s[std::size_t(order[std::size_t(i)])] = 1;
		sel.objective = selection_objective(gp, sel.s);
		return sel;
	}

	OfdmConfig apply_selection(const OfdmConfig &config, const SelectionVector &sel)
	{
		config.validate();
		const auto data = config.data_indices();
		const std::size_t G = sel.s.size();
		if (G == 0 || data.size() % G != 0)
			throw ParameterError("apply_selection: " + std::to_string(G) + " groups do not split " +
			                     std::to_string(data.size()) + " DATA subcarriers");
		if (sel.selected() == 0)
			throw ParameterError("apply_selection: no group selected, the frame would carry no data");
		OfdmConfig out = config;
		const std::size_t size = data.size() / G;
		for (std::size_t i = 0; i < data.size(); ++i)
			if (!sel.s[i / size])
				out.subcarrier_map[std::size_t(data[i])] = SubcarrierRole::Null;
		return out;
	}

	double selection_power_gain(const OfdmConfig &before, const OfdmConfig &after)
	{
		const int a0 = before.n_subcarriers - before.count(SubcarrierRole::Null);
		const int a1 = after.n_subcarriers - after.count(SubcarrierRole::Null);
		if (a0 < 1 || a1 < 1)
			throw ParameterError("selection_power_gain: no active subcarriers");
		return std::sqrt(double(a0) / double(a1));
	}

	void write_error_profile_csv(std::ostream &out, const SubcarrierErrorProfile &profile)
	{
		out.precision(10);
		out << "subcarrier,p_hat\n";
		for (Eigen::Index k = 0; k < profile.p_hat.size(); ++k)
			out << k << ',' << profile.p_hat[k] << '\n';
	}

	void write_error_profile_csv(const std::filesystem::path &path, const SubcarrierErrorProfile &profile)
	{
		auto out = open_out(path);
		write_error_profile_csv(out, profile);
	}

	void write_selection_csv(std::ostream &out, const SelectionVector &sel)
	{
		out.precision(10);
		out << "group,s\n";
		for (std::size_t g = 0; g < sel.s.size(); ++g)
			out << g << ',' << int(sel.s[g]) << '\n';
	}

	void write_selection_csv(const std::filesystem::path &path, const SelectionVector &sel)
	{
		auto out = open_out(path);
		write_selection_csv(out, sel);
	}

	SubcarrierErrorProfile read_error_profile_csv(const std::filesystem::path &path)
	{
		const auto rows = read_pairs(path, "subcarrier,p_hat");
		SubcarrierErrorProfile prof;
		prof.K = int(rows.size());
		prof.p_hat = RVec(prof.K);
		for (int k = 0; k < prof.K; ++k)
			prof.p_hat[k] = rows[std::size_t(k)].second;
		return prof;
	}

	SelectionVector read_selection_csv(const std::filesystem::path &path)
	{
		SelectionVector sel;
		for (const auto &[g, v] : read_pairs(path, "group,s")) {
			if (v != 0 && v != 1)
				throw IoError(path.string() + ": s must be 0 or 1 in group " + std::to_string(g));
			sel.s.push_back(std::uint8_t(v));
		}
		sel.required = sel.selected();
		return sel;
	}

	void RateAdaptExperiment::validate() const
	{
		ofdm.validate();
		channel.validate();
		code.validate();
		if (training_packets < 1 || test_packets < 1)
			throw ParameterError("rate adaptation: packet counts must be >= 1");
		const int K = ofdm.count(SubcarrierRole::Data);
		if (groups < 1 || K % groups != 0)
			throw ParameterError("rate adaptation: " + std::to_string(groups) + " groups do not split " +
			                     std::to_string(K) + " DATA subcarriers");
		for (double r : target_rates)
			if (!(r >= 0))
				throw ParameterError("rate adaptation: target rates must be >= 0");
	}

	double RateAdaptExperiment::info_bits_per_block() const
	{
		return double(ofdm.count(SubcarrierRole::Data)) * ofdm.bits_per_symbol() * 0.5;
	}

	ChannelModel RateAdaptExperiment::notch_channel(double snr_db, double tilt_db)
	{
		ChannelModel m;
		// tilt from 0 dB at 46 kHz down to the top of the band, notch edges 7.5 kHz either side of 190 kHz
		auto tilt = [=](double f) { return -tilt_db * (f - 46e3) / 208e3; };
		m.response_curve = {{46e3, tilt(46e3)},       {180e3, tilt(180e3)},        {182.5e3, tilt(182.5e3) - 30},
		                    {197.5e3, tilt(197.5e3) - 30}, {200e3, tilt(200e3)}, {254e3, tilt(254e3)}};
		m.noise_psd = noise_psd_for_snr(snr_db, 1.0, 208.33e3);
		return m;
	}

	RateAdaptResult run_rate_adaptation(const RateAdaptExperiment &ex)
	{
		ex.validate();
		const OfdmConfig &base = ex.ofdm;
		const int N_B = base.blocks_per_frame;
		RateAdaptResult res;

		// training: uncoded random payloads over the full map
		{
			OfdmTransceiver t(base);
			std::vector<Bits> tx, rx;
			for (int p = 0; p < ex.training_packets; ++p) {
				Bits b = random_bits(base.payload_bits(), derive_seed(ex.seed, kTrainPayload, std::uint64_t(p)));
				const auto y = over_channel(t.transmit(b), base, keyed(ex.channel, derive_seed(ex.seed, kTrainNoise, std::uint64_t(p))));
				RxResult r = t.receive(y);
				if (!r.diag.detected || r.bits.size() != b.size()) {
					// a missed frame counts as every bit wrong
					r.bits = b;
					for (auto &v : r.bits)
						v ^= 1;
				}
				tx.push_back(std::move(b));
				rx.push_back(std::move(r.bits));
			}
			res.profile = estimate_error_profile(tx, rx, base, ex.training_packets, N_B);
		}
		res.groups = group_profile(res.profile, ex.groups);

		const double T_P = base.frame_period(), N_D = ex.info_bits_per_block();
		for (double R : ex.target_rates) {
			RateAdaptPoint pt;
			pt.target_rate = R;
			SelectionVector sel;
			try {
				sel = solve_selection(res.groups, R, T_P, N_D, N_B);
			} catch (const InfeasibleRate &) {
				pt.feasible = false;
				sel.s.assign(std::size_t(res.groups.G), 0);
			}
			pt.groups_selected = sel.selected();
			pt.objective = sel.objective;
			res.selections.push_back(sel);
			if (pt.groups_selected == 0) {
				res.points.push_back(pt);
				continue;
			}
			const OfdmConfig c = apply_selection(base, sel);
			OfdmTransceiver t(c);
			const std::size_t coded = c.payload_bits(), info = ex.code.info_length(coded);
			pt.throughput = double(info) / T_P;
			const Interleaver il({coded, kInterleaverSeed});
			ViterbiDecoder dec(ex.code);
			for (int p = 0; p < ex.test_packets; ++p) {
				const Bits msg = random_bits(info, derive_seed(ex.seed, kTestPayload, std::uint64_t(p)));
				Bits cw = conv_encode(msg, ex.code);
				cw.resize(coded, 0);
				const auto y = over_channel(t.transmit(il.interleave(cw)), c, keyed(ex.channel, derive_seed(ex.seed, kTestNoise, std::uint64_t(p))));
				const RxResult r = t.receive(y);
				++pt.packets;
				pt.bits += info;
				if (!r.diag.detected || std::size_t(r.llr.size()) != coded) {
					++pt.packet_errors;
					pt.bit_errors += info;
					continue;
				}
				const RVec llr = il.deinterleave(r.llr);
				const Bits got = dec.decode(llr.head(Eigen::Index(ex.code.coded_length(info))));
				std::size_t wrong = 0;
				for (std::size_t i = 0; i < info; ++i)
					wrong += (got[i] ^ msg[i]) & 1;
				pt.bit_errors += wrong;
				pt.packet_errors += wrong > 0;
			}
			res.points.push_back(pt);
		}
		return res;
	}

	void write_rate_adapt_csv(std::ostream &out, const RateAdaptResult &result)
	{
		out.precision(10);
		out << "target_rate,feasible,groups_selected,objective,throughput,packets,packet_errors,per,bits,bit_errors,ber\n";
		for (const auto &p : result.points)
			out << p.target_rate << ',' << int(p.feasible) << ',' << p.groups_selected << ',' << p.objective << ',' << p.throughput << ','
			    << p.packets << ',' << p.packet_errors << ',' << p.per() << ',' << p.bits << ',' << p.bit_errors << ','
			    << p.ber() << '\n';
	}

	void write_rate_adapt_csv(const std::filesystem::path &path, const RateAdaptResult &result)
	{
		auto out = open_out(path);
		write_rate_adapt_csv(out, result);
	}

	void write_selection_map_csv(std::ostream &out, const RateAdaptResult &result, const RateAdaptExperiment &ex)
	{
		out.precision(10);
		const auto data = ex.ofdm.data_indices();
		const int n = ex.ofdm.n_subcarriers;
		auto freq = [&](int k) { return ex.ofdm.f_center + double(k - n / 2) * ex.ofdm.spacing(); };
		out << "group,f_low,f_high,P";
		for (const auto &p : result.points)
			out << ",s_" << p.target_rate;
		out << '\n';
		const GroupProfile &gp = result.groups;
		for (int g = 0; g < gp.G; ++g) {
			out << g << ',' << freq(data[std::size_t(gp.first(g))]) << ','
			    << freq(data[std::size_t(gp.first(g) + gp.group_size - 1)]) << ',' << gp.P[g];
			for (const auto &sel : result.selections)
				out << ',' << int(sel.s[std::size_t(g)]);
			out << '\n';
		}
	}
} // namespace uam
