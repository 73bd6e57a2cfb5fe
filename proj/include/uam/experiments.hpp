#pragma once

#include "uam/channel.hpp"
#include "uam/css.hpp"
#include "uam/fec.hpp"
#include "uam/link.hpp"
#include "uam/ofdm.hpp"
#include "uam/probe.hpp"
#include "uam/rate_adapt.hpp"
#include "uam/sequences.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace uam
{
	/// 64-bit FNV-1a.
	std::uint64_t fnv1a(const std::string &text);

	/// Uncoded BER against the SNR of a unit-power transmission over
	/// `reference_bandwidth`. The noise PSD is fixed by the top of the grid
	/// and each step below it adds attenuation, so every configuration sees
	/// the same physical channel at a grid point.
	struct BerSweepSpec
	{
		std::vector<std::pair<std::string, OfdmConfig>> configs;
		ChannelModel channel = ChannelModel::identity();
		double snr_start = -5.0, snr_stop = 12.5, snr_step = 2.5;
		double reference_bandwidth = 125e3;
		std::size_t min_bits = 100000;
		int max_frames = 64; ///< per cell, whatever the bits
		std::uint64_t seed = 1;

		std::vector<double> grid() const;
		static BerSweepSpec marina();
	};

	struct BerPoint
	{
		std::string config;
		double snr_db = 0.0;
		double attenuation_db = 0.0;
		int frames = 0;
		int detected = 0;
		std::size_t bits = 0;
		std::size_t errors = 0; ///< a missed frame counts half its bits
		double snr_inband = 0.0;   ///< dB over the configuration's own bandwidth
		double snr_estimate = 0.0; ///< receiver estimate, mean over detected frames

		double ber() const { return bits ? double(errors) / double(bits) : 0.0; }
	};

	std::vector<BerPoint> run_ber_sweep(const BerSweepSpec &spec);
	std::string ber_sweep_csv(const std::vector<BerPoint> &points);

	/// Coded frames in the high-rate configuration.
	struct HighRateSpec
	{
		OfdmConfig ofdm = OfdmConfig::high_rate();
		ChannelModel channel = ChannelModel::identity();
		double snr_db = 15.0; ///< unit power over the configuration bandwidth; ignored when the channel carries noise
		int frames = 10;
		ConvCodeSpec code;
		std::uint64_t seed = 1;
	};

	struct HighRateResult
	{
		double raw_rate = 0.0, coded_rate = 0.0;
		int frames = 0, detected = 0, frame_errors = 0;
		std::size_t raw_bits = 0, raw_errors = 0, info_bits = 0, info_errors = 0;
	};

	HighRateResult run_high_rate(const HighRateSpec &spec);
	std::string high_rate_csv(const HighRateResult &r);

	/// File transfers over one channel, one per packet size. With
	/// `forced_loss` set the link is ideal and drops DATA at that rate.
	struct ArqSweepSpec
	{
		ChannelModel channel = default_channel();
		CssConfig forward = CssConfig::forward(), feedback = CssConfig::feedback();
		std::vector<std::size_t> packet_sizes{16, 32, 48, 64, 80, 128, 256};
		std::size_t file_bytes = 8192;
		ArqConfig arq;
		std::optional<double> forced_loss;
		std::uint64_t seed = 1;

		/// Default four-path channel, 22 dB down.
		static ChannelModel default_channel();
	};

	struct ArqPoint
	{
		std::size_t packet_size = 0;
		bool delivered = false;
		LinkStats stats;
	};

	std::vector<ArqPoint> run_arq_sweep(const ArqSweepSpec &spec);
	std::string arq_csv(const std::vector<ArqPoint> &points);

	struct CirProbeSpec
	{
		ChannelModel channel = ChannelModel::marina();
		MSequenceSpec sequence = MSequenceSpec::standard(10);
		double chip_rate = 100e3;
		double f_center = 100e3;
		double pulse_period = 0.25;
		int pulses = 4;
		double peak_threshold = 0.1;
		std::uint64_t seed = 1;
	};

	struct FreqProbeSpec
	{
		ChannelModel channel = ChannelModel::marina();
		LfmSpec lfm{-50e3, 50e3, 20e-3, 1.0};
		double sample_rate = 125e3;
		double f_center = 100e3;
		int repetitions = 8;
		std::uint64_t seed = 1;
	};

	CirEstimate run_cir_probe(const CirProbeSpec &spec);
	/// Long format, like write_cir_csv.
	std::string cir_csv(const CirEstimate &cir);
	/// One row per peak of every valid snapshot.
	std::string cir_peaks_csv(const CirEstimate &cir, double peak_threshold);
	FrequencyResponse run_freq_probe(const FreqProbeSpec &spec);
	std::string freq_csv(const FrequencyResponse &fr);

	/// One OFDM frame of random bits through the channel.
	struct LoopbackSpec
	{
		OfdmConfig ofdm = OfdmConfig::marina_100k_dbpsk();
		ChannelModel channel = ChannelModel::identity();
		int frames = 1;
		std::uint64_t seed = 1;
	};

	std::string run_loopback_csv(const LoopbackSpec &spec);

	/// Waveform files on the medium: stream-tx renders a baseband recording
	/// onto the medium band and rate, stream-rx plays a medium recording from
	/// one endpoint and records what the other hears through the channel.
	struct StreamSpec
	{
		ChannelModel channel = ChannelModel::identity();
		double medium_rate = 0.0;   ///< 0 keeps the input rate
		double medium_center = 0.0; ///< 0 keeps the input centre
		std::uint64_t seed = 1;
	};

	void stream_tx(const std::filesystem::path &in, const std::filesystem::path &out, const StreamSpec &spec);
	void stream_rx(const std::filesystem::path &in, const std::filesystem::path &out, const StreamSpec &spec);

	/// A parsed experiment configuration: JSON with schema_version 1, an
	/// "experiment" verb and only the keys that verb knows. The resolved
	/// form carries every default and hashes the run.
	struct ExperimentOutput
	{
		std::string main;                                       ///< CSV for --out
		std::vector<std::pair<std::string, std::string>> extra; ///< (file suffix, CSV) written beside it
	};

	/// Runs `verb` from the JSON text (may be empty: all defaults) and
	/// returns its CSVs, each led by `# experiment=` and `# config_hash=` lines.
	/// A non-empty `config` must name the same verb. Stream verbs are not
	/// handled here.
	ExperimentOutput run_experiment(const std::string &verb, const std::string &config, std::optional<std::uint64_t> seed);

	/// Canonical resolved configuration for `verb`, the text that is hashed.
	std::string resolve_experiment(const std::string &verb, const std::string &config, std::optional<std::uint64_t> seed);

	StreamSpec parse_stream_spec(const std::string &config, std::optional<std::uint64_t> seed);
} // namespace uam
