#pragma once

#include "uam/channel.hpp"
#include "uam/fec.hpp"
#include "uam/ofdm.hpp"
#include "uam/signal.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace uam
{
	/// Bit-error observations over training packets, one row per DATA
	/// subcarrier in map order.
	struct SubcarrierErrorProfile
	{
		int K = 0;
		int packets = 0;
		int blocks = 0;
		int bits_per_symbol = 1;         ///< most errors one (packet, block) can show on a subcarrier
		std::vector<std::uint8_t> counts; ///< e[k][p][b] at (k * packets + p) * blocks + b
		RVec p_hat;

		int errors(int k, int p, int b) const { return counts[(std::size_t(k) * packets + p) * blocks + b]; }
		/// Mean errors per (packet, block) from the raw counts.
		RVec recompute() const;
	};

	/// `tx` and `rx` hold one payload per packet, laid out as the OFDM
	/// transmitter consumes them: block, then DATA subcarrier, then bit.
	SubcarrierErrorProfile estimate_error_profile(const std::vector<Bits> &tx, const std::vector<Bits> &rx,
	                                              const OfdmConfig &config, int packets, int blocks);

	/// G contiguous groups of K/G DATA subcarriers.
	struct GroupProfile
	{
		int G = 0;
		int group_size = 0;
		RVec P; ///< summed p_hat per group

		int first(int g) const { return g * group_size; }
	};

	GroupProfile group_profile(const SubcarrierErrorProfile &profile, int G);

	struct SelectionVector
	{
		std::vector<std::uint8_t> s;
		int required = 0;       ///< groups the rate constraint forces on
		double objective = 0.0; ///< summed P of the selected groups

		int selected() const;
	};

	class InfeasibleRate : public std::runtime_error
	{
	public:
		InfeasibleRate(const std::string &what, double max_rate) : std::runtime_error(what), max_rate(max_rate) {}
		double max_rate; ///< bit/s with every group on
	};

	/// Groups the constraint sum(s) >= R G T_P / (N_D N_B) forces on.
	/// N_D counts information bits per block across all DATA subcarriers.
	int required_groups(double R, int G, double T_P, double N_D, int N_B);

	/// Minimum summed group error subject to the rate constraint: the
	/// `required` groups with the smallest P, lower index first on ties.
	SelectionVector solve_selection(const GroupProfile &gp, double R, double T_P, double N_D, int N_B);

	/// DATA subcarriers of unselected groups become NULL. The transmitter
	/// normalizes block power over the active subcarriers, so survivors are
	/// boosted by selection_power_gain().
	OfdmConfig apply_selection(const OfdmConfig &config, const SelectionVector &sel);
	/// Amplitude factor on each active subcarrier going from `before` to `after`.
	double selection_power_gain(const OfdmConfig &before, const OfdmConfig &after);

	void write_error_profile_csv(std::ostream &out, const SubcarrierErrorProfile &profile);
	void write_error_profile_csv(const std::filesystem::path &path, const SubcarrierErrorProfile &profile);
	void write_selection_csv(std::ostream &out, const SelectionVector &sel);
	void write_selection_csv(const std::filesystem::path &path, const SelectionVector &sel);
	/// Reads `subcarrier,p_hat` rows back; counts are not stored, so they stay empty.
	SubcarrierErrorProfile read_error_profile_csv(const std::filesystem::path &path);
	SelectionVector read_selection_csv(const std::filesystem::path &path);

	/// Training, selection and coded test traffic over one channel.
	struct RateAdaptExperiment
	{
		OfdmConfig ofdm = OfdmConfig::high_rate();
		ChannelModel channel = notch_channel();
		int training_packets = 88;
		int groups = 128;
		std::vector<double> target_rates{80e3, 90e3, 100e3, 110e3, 120e3, 130e3};
		int test_packets = 50;
		ConvCodeSpec code;
		std::uint64_t seed = 1;

		void validate() const;
		/// Information bits per block with every DATA subcarrier on.
		double info_bits_per_block() const;

		/// Direct path with a 30 dB notch 15 kHz wide at 190 kHz on a linear
		/// downward tilt of `tilt_db` across the high-rate band; unit power
		/// meets `snr_db` before shaping.
		static ChannelModel notch_channel(double snr_db = 13.0, double tilt_db = 20.0);
	};

	struct RateAdaptPoint
	{
		double target_rate = 0.0;
		bool feasible = true; ///< infeasible targets carry no traffic
		int groups_selected = 0;
		double objective = 0.0;
		double throughput = 0.0; ///< information bit/s of the adapted frame
		int packets = 0;
		int packet_errors = 0;
		std::size_t bit_errors = 0;
		std::size_t bits = 0;

		double per() const { return packets ? double(packet_errors) / packets : 0.0; }
		double ber() const { return bits ? double(bit_errors) / double(bits) : 0.0; }
	};

	struct RateAdaptResult
	{
		SubcarrierErrorProfile profile;
		GroupProfile groups;
		std::vector<SelectionVector> selections; ///< one per target rate
		std::vector<RateAdaptPoint> points;
	};

	/// Every noise draw and payload is keyed by packet index, so all target
	/// rates see the same noise on their p-th test packet. Infeasible targets
	/// are marked and skipped.
	RateAdaptResult run_rate_adaptation(const RateAdaptExperiment &ex);

	/// One row per target rate.
	void write_rate_adapt_csv(std::ostream &out, const RateAdaptResult &result);
	void write_rate_adapt_csv(const std::filesystem::path &path, const RateAdaptResult &result);
	/// Subcarrier utilization map: one row per group with its band edges, P and s per target.
	void write_selection_map_csv(std::ostream &out, const RateAdaptResult &result, const RateAdaptExperiment &ex);
} // namespace uam
