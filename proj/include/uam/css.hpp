#pragma once

#include "uam/signal.hpp"

#include <cstdint>

namespace uam
{
	/// Binary chirp keying: bit 1 is an up-chirp (-B/2 -> +B/2), bit 0 a
	/// down-chirp, each followed by a silent guard. A fixed 32-bit sync word
	/// in the same keying precedes the payload.
	struct CssConfig
	{
		double bandwidth = 125e3;
		double f_center = 100e3;
		double chirp_duration = 1e-3;
		double guard = 0.25e-3;
		double sample_rate = 0.0; ///< 0 means critical sampling (= bandwidth)
		double detection_threshold = 0.1;

		static constexpr std::uint32_t kSyncWord = 0x1ACFFC1Du;

		void validate() const;
		double rate() const { return sample_rate > 0 ? sample_rate : bandwidth; }
		Eigen::Index chirp_samples() const;
		Eigen::Index guard_samples() const;
		Eigen::Index symbol_samples() const { return chirp_samples() + guard_samples(); }
		double symbol_duration() const { return double(symbol_samples()) / rate(); }
		/// Air time for a payload of `n_bits`, sync word included.
		double airtime(std::size_t n_bits) const { return double(32 + n_bits) * symbol_duration(); }

		/// 125 kHz, 1 ms chirps.
		static CssConfig forward();
		/// 31.125 kHz, 4 ms chirps.
		static CssConfig feedback();
	};

	BasebandSignal css_up_chirp(const CssConfig &config);
	BasebandSignal css_down_chirp(const CssConfig &config);
	/// Sync word waveform, guards included.
	BasebandSignal css_sync_waveform(const CssConfig &config);

	BasebandSignal css_modulate(const Bits &bits, const CssConfig &config);

	struct CssResult
	{
		Bits bits;
		bool detected = false;
		double metric = 0.0;      ///< peak normalized sync correlation in [0, 1]
		Eigen::Index start = 0;   ///< sample index of the sync word
		Eigen::Index payload_start = 0;
	};

	/// Finds the first sync word at or after `from` and decides every
	/// following symbol slot that fits in the signal, up to `max_bits`
	/// (0 = no limit). A nonzero `search` only looks for sync words starting
	/// within that many samples of `from`.
	CssResult css_demodulate(const BasebandSignal &sig, const CssConfig &config, std::size_t max_bits = 0, Eigen::Index from = 0,
	                         Eigen::Index search = 0);

	/// Normalized sync matched-filter metric |c| / (||t|| sqrt(E_window)) at every lag.
	RVec css_sync_metric(const CVec &x, const CssConfig &config);
} // namespace uam
