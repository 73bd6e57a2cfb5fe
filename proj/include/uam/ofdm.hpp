#pragma once

#include "uam/sequences.hpp"
#include "uam/signal.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace uam
{
	enum class Modulation
	{
		DBPSK,
		DQPSK
	};

	enum class SubcarrierRole : std::uint8_t
	{
		Data,
		Pilot,
		Null
	};

	enum class PreambleKind
	{
		PnAutocorr, ///< two identical PN segments, sliding autocorrelation detector
		MseqXcorr   ///< single m-sequence, matched-filter detector
	};

	struct PreambleSpec
	{
		PreambleKind kind = PreambleKind::PnAutocorr;
		/// PN_AUTOCORR uses one period of this sequence per segment;
		/// MSEQ_XCORR sends it once.
		MSequenceSpec sequence = MSequenceSpec::standard(10);

		static PreambleSpec pn_autocorr(int degree = 10);
		static PreambleSpec mseq_xcorr(int degree = 9);
	};

	using SubcarrierMap = std::vector<SubcarrierRole>;

	/// 32 NULLs at each band edge, PILOT on every index divisible by 64.
	SubcarrierMap default_subcarrier_map(int n_subcarriers = 8192);
	/// 8064 DATA, 32 + 32 edge NULLs and 64 PILOTs spaced 127 apart.
	SubcarrierMap high_rate_subcarrier_map();

	/// Full ZP-OFDM frame parameterization. Subcarrier index k sits at
	/// baseband frequency (k - n/2) * spacing and the baseband sample
	/// rate equals the bandwidth.
	struct OfdmConfig
	{
		int n_subcarriers = 8192;
		double bandwidth = 100e3;
		double f_center = 100e3;
		double guard_time = 60.3e-3;
		Modulation modulation = Modulation::DBPSK;
		SubcarrierMap subcarrier_map = default_subcarrier_map();
		int blocks_per_frame = 4;
		PreambleSpec preamble;
		double tx_gain = 1.0;

		double preamble_guard_time = 60.3e-3; ///< silence between preamble and first block
		double inter_frame_gap = 0.0;         ///< idle time after the last guard
		double detection_threshold = 0.25;
		double doppler_min = 0.99;
		double doppler_max = 1.01;
		double fold_time = 10e-3;       ///< guard tail folded onto the block head (capped at the guard)
		int timing_backoff = 4;         ///< samples the FFT window starts ahead of the detected peak
		double erasure_db = -30.0;      ///< below the median pilot-interpolated gain -> LLR 0
		std::uint64_t pilot_seed = 0x5EA5E7ULL;

		void validate() const;

		double sample_rate() const { return bandwidth; }
		double spacing() const { return bandwidth / n_subcarriers; }
		int bits_per_symbol() const { return modulation == Modulation::DQPSK ? 2 : 1; }
		Eigen::Index guard_samples() const;
		Eigen::Index preamble_samples() const;       ///< chips only
		Eigen::Index preamble_guard_samples() const;
		Eigen::Index fold_samples() const;
		Eigen::Index block_stride() const { return n_subcarriers + guard_samples(); }
		/// Samples produced by the transmitter: preamble, its guard, N_B zero-padded blocks.
		Eigen::Index frame_samples() const;
		double block_duration() const { return n_subcarriers / bandwidth; }
		double frame_duration() const { return double(frame_samples()) / bandwidth; }
		/// Frame duration plus the inter-frame gap.
		double frame_period() const { return frame_duration() + inter_frame_gap; }

		std::vector<int> data_indices() const;
		std::vector<int> pilot_indices() const;
		int count(SubcarrierRole role) const;
		/// Payload capacity in bits.
		std::size_t payload_bits() const;

		/// Marina BER configurations: 50 kHz DBPSK, 100 kHz DBPSK, 100 kHz DQPSK.
		static OfdmConfig marina_50k_dbpsk();
		static OfdmConfig marina_100k_dbpsk();
		static OfdmConfig marina_100k_dqpsk();
		/// 208.33 kHz at 150 kHz, DQPSK, 8064 DATA, 511-chip m-sequence, 10 ms guards, 209.7 ms period.
		/// No Doppler search.
		static OfdmConfig high_rate();
	};

	std::string to_string(Modulation m);
	std::string to_string(PreambleKind k);

	/// Rate in bit/s: N_B * |DATA| * bits_per_symbol * fec_rate / frame_period.
	double compute_data_rate(const OfdmConfig &config, double fec_rate = 1.0);

	struct OfdmFrame
	{
		Bits payload_bits;
		OfdmConfig config;
		Eigen::MatrixXcd symbols; ///< N_B x n_subcarriers, before gain scaling
		BasebandSignal waveform;
	};

	struct RxDiagnostics
	{
		bool detected = false;
		double detection_metric = 0.0;
		double timing_offset = 0.0; ///< preamble start in input samples (fractional)
		double doppler_scale = 1.0;
		double cfo_hz = 0.0;
		double snr_estimate = 0.0; ///< dB
		Eigen::Index frame_end = 0; ///< input sample index just past the frame
		Eigen::MatrixXi per_subcarrier_errors; ///< N_B x n_subcarriers, filled with a reference
		double ber = 0.0;
		std::size_t bit_errors = 0;
	};

	struct RxResult
	{
		Bits bits;
		RVec llr; ///< positive favours 0; 0 marks an erasure
		RxDiagnostics diag;
	};

	struct PreambleDetection
	{
		bool detected = false;
		double offset = 0.0; ///< refined preamble start (samples)
		double metric = 0.0;
		Eigen::Index coarse = 0;
		double doppler_scale = 1.0;
		double second_peak = 0.0; ///< refined start of the second PN segment
	};

	/// Packet detection and timing on a signal at the OFDM sample rate.
	/// Searches from `start`; the first threshold crossing is refined to
	/// the metric maximum within one preamble length.
	PreambleDetection detect_preamble(const BasebandSignal &sig, const OfdmConfig &config, Eigen::Index start = 0);

	/// Detection metric at every lag: normalized sliding autocorrelation for
	/// PN_AUTOCORR, normalized matched filter magnitude for MSEQ_XCORR.
	RVec detection_metric(const CVec &x, const OfdmConfig &config);

	/// Least-squares pilot gains, magnitude and unwrapped phase linearly
	/// interpolated over the band; NULL subcarriers are 0.
	CVec estimate_channel_pilots(const CVec &block_symbols, const OfdmConfig &config);

	/// Stateful transceiver. Reconfiguration is allowed between frames.
	class OfdmTransceiver
	{
	public:
		explicit OfdmTransceiver(OfdmConfig config = {});

		void reconfigure(OfdmConfig config);
		const OfdmConfig &config() const { return config_; }

		OfdmFrame build_frame(const Bits &bits) const;
		BasebandSignal transmit(const Bits &bits) const { return build_frame(bits).waveform; }

		/// Baseband preamble as transmitted (before tx_gain).
		const CVec &preamble() const { return preamble_; }
		const CVec &pn_segment() const { return segment_; }
		const std::vector<double> &pilot_values() const { return pilots_; }

		/// Demodulate the first frame at or after `start`. With `reference`,
		/// per-subcarrier error counts and BER are filled in.
		RxResult receive(const BasebandSignal &sig, const Bits *reference = nullptr, Eigen::Index start = 0) const;

		/// Frequency-domain symbols of the frame blocks, given a signal already
		/// aligned, Doppler- and CFO-corrected, with the first block at `first_block`.
		Eigen::MatrixXcd demodulate_blocks(const CVec &x, double first_block) const;

		/// Differential demapping of equalized blocks into LLRs.
		RVec demap(const Eigen::MatrixXcd &Y) const;

	private:
		OfdmConfig config_;
		CVec preamble_, segment_;
		std::vector<double> pilots_; // per subcarrier, 0 where not a pilot
		std::vector<int> data_, pilot_idx_;
		std::vector<char> run_start_; // per data index: first symbol of a differential run
		double block_scale_ = 1.0;
	};

	BasebandSignal ofdm_transmit(const Bits &bits, const OfdmConfig &config);
	RxResult ofdm_receive(const BasebandSignal &sig, const OfdmConfig &config, const Bits *reference = nullptr);
} // namespace uam
