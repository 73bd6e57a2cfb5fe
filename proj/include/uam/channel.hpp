#pragma once

#include "uam/signal.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <deque>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace uam
{
	struct Tap
	{
		double delay = 0.0; ///< seconds
		/// Complex gain as seen at the carrier (baseband-equivalent gain is
		/// gain * exp(-j 2 pi fc delay)).
		cplx gain = 1.0;
	};

	/// Narrowband tone added to the received signal; power in W (passband mean power).
	struct Interferer
	{
		double frequency = 50e3;
		double power = 0.0;
	};

	/// Piecewise-linear per-tap gain multipliers. gains[i][j] multiplies tap
	/// i at knot time times[j]; held constant outside the knots.
	struct TimeVaryingProfile
	{
		std::vector<double> times;
		std::vector<std::vector<cplx>> gains;
		double duration = 0.0;

		void validate(std::size_t n_taps) const;
		cplx gain_at(std::size_t tap, double t) const;
	};

	struct ChannelModel
	{
		std::vector<Tap> taps{Tap{}};
		double doppler_scale = 1.0;
		double noise_psd = 0.0; ///< one-sided passband PSD, W/Hz
		std::vector<Interferer> interferers;
		double attenuation_db = 0.0;
		/// (frequency Hz, gain dB) table, linearly interpolated in dB and clamped at the ends.
		std::vector<std::pair<double, double>> response_curve;
		double thorp_range = 0.0; ///< metres; 0 disables absorption
		double turnaround = 3e-3;
		std::uint64_t rng_seed = 1;
		std::optional<TimeVaryingProfile> profile;

		void validate() const;
		double propagation_delay() const { return taps.front().delay; }
		double max_delay() const;
		bool shaped() const { return !response_curve.empty() || thorp_range > 0; }

		/// Identity channel: one unit tap, no noise.
		static ChannelModel identity();
		/// Unattenuated SNR of a unit-power transmission over 125 kHz on the default channel.
		static constexpr double kMarinaSnrDb = 13.5;
		/// Direct path and three reflections at 0, 1.5, 3.1, 5.0 ms, 0/-6/-9/-12 dB,
		/// noise at kMarinaSnrDb.
		static ChannelModel marina();
	};

	/// Thorp absorption in dB/km, f in Hz.
	double thorp_absorption_db_per_km(double f);

	/// Linear amplitude response of the shaping stage (response curve and absorption) at frequency f.
	double shaping_gain(const ChannelModel &model, double f);

	/// Noise variance a baseband-equivalent receiver at `sample_rate` sees per
	/// complex sample (DUC amplitude convention: passband = Re{bb e^{jwt}}).
	double baseband_noise_variance(const ChannelModel &model, double sample_rate);

	/// Real passband channel.
	PassbandSignal propagate(const PassbandSignal &sig, const ChannelModel &model);

	/// Complex baseband equivalent of `propagate` for a signal centred on
	/// f_center. Output has input length plus the maximum delay in samples.
	BasebandSignal propagate(const BasebandSignal &sig, double f_center, const ChannelModel &model);

	/// Noise-free channel output (attenuation, shaping, Doppler, multipath).
	BasebandSignal propagate_noiseless(const BasebandSignal &sig, double f_center, const ChannelModel &model);

	/// Received signal power over in-band noise power, dB. Signal power is
	/// the noise-free output energy divided by the transmitter's on-time
	/// (nonzero samples), so zero-padded guards do not dilute it. Noise is
	/// integrated over `noise_bandwidth` (defaults to the signal sample
	/// rate). Returns +infinity without noise.
	double snr_at_receiver(const ChannelModel &model, const BasebandSignal &tx, double f_center, double noise_bandwidth = 0.0);
	double snr_at_receiver(const ChannelModel &model, const PassbandSignal &tx, double f_low, double f_high);

	/// Noise PSD that yields `snr_db` for a transmitted power `signal_power`
	/// (baseband units) through a unit-gain channel over `noise_bandwidth`.
	double noise_psd_for_snr(double snr_db, double signal_power, double noise_bandwidth);

	ChannelModel load_channel_model(const std::filesystem::path &path);
	ChannelModel channel_model_from_json(const std::string &text);
	std::string channel_model_to_json(const ChannelModel &model);

	/// Recorded CIR trace, long format CSV with header
	/// `time,delay,gain_db,phase_deg`. Each distinct delay becomes a tap with
	/// unit base gain and the rows form its trajectory.
	void load_cir_trace(const std::filesystem::path &path, ChannelModel &model);
	void load_cir_trace_text(const std::string &csv, ChannelModel &model);

	struct MediumEvent
	{
		enum class Kind
		{
			TxStart,
			TxEnd
		};
		double time;
		Kind kind;
		int endpoint;
		std::string label;
	};

	/// Half-duplex acoustic medium on a virtual clock. Every transmission is
	/// heard by all other endpoints through the channel model; an endpoint
	/// is deaf while it transmits and for `turnaround` seconds afterwards.
	/// Overlapping transmissions add up at the receivers.
	class HalfDuplexMedium
	{
	public:
		HalfDuplexMedium(ChannelModel model, double f_center, double sample_rate);

		int add_endpoint(std::string name);

		/// Waveform at the medium rate and centre frequency, starting at `start` seconds.
		void transmit(int from, double start, const BasebandSignal &sig, std::string label = {});

		/// What `at` hears over [t0, t1): arrivals from every other endpoint,
		/// noise, and zeros wherever the endpoint is muted.
		BasebandSignal receive(int at, double t0, double t1) const;
		/// As receive(), but the noise is drawn from `noise_key` starting at
		/// t0, so equal keys give equal noise relative to the window. Used to
		/// give every reception its own noise draw for common random numbers
		/// across experiment arms. Interferers stay on the medium clock.
		BasebandSignal receive(int at, double t0, double t1, std::uint64_t noise_key) const;

		bool muted(int at, double t) const;
		/// End time of the latest arrival at `at`, or -inf.
		double last_arrival_end(int at) const;

		/// Frees the samples of arrivals that end before `t`; receiving before
		/// `t` afterwards misses them. Muting is unaffected.
		void retire(double t);

		double sample_rate() const { return fs_; }
		double f_center() const { return fc_; }
		const ChannelModel &model() const { return model_; }
		const std::vector<MediumEvent> &log() const { return log_; }
		const std::string &name(int ep) const { return names_.at(std::size_t(ep)); }

	private:
		struct Emission
		{
			int from;
			Eigen::Index start; // sample index at the transmitter
			Eigen::Index tx_length;
			Eigen::Index arrival_length;
			std::shared_ptr<const CVec> arrival; // channel output, index 0 at `start`; dropped by retire()
		};

		CVec arrivals(int at, Eigen::Index k0, Eigen::Index k1) const;
		void mute(CVec &out, int at, Eigen::Index k0) const;
		void add_noise(CVec &out, int at, Eigen::Index first) const;

		ChannelModel model_;
		double fc_, fs_;
		std::vector<std::string> names_;
		std::vector<Emission> emissions_;
		// the channel is applied shift-invariantly, so repeated waveforms reuse their output
		std::deque<std::pair<CVec, std::shared_ptr<const CVec>>> recent_;
		std::vector<MediumEvent> log_;
	};
} // namespace uam
