#pragma once

#include "uam/sequences.hpp"
#include "uam/signal.hpp"

#include <filesystem>
#include <vector>

namespace uam
{
	/// One row of `magnitude` per PN pulse period. Rows are aligned so every
	/// snapshot's direct path sits at the lag of the first valid snapshot's
	/// direct path, and normalized to a peak of 1. Rows whose peak does not
	/// clear three times the noise floor are left at zero and flagged invalid.
	struct CirEstimate
	{
		RVec lags;                 ///< seconds, uniform, starting at 0
		RVec times;                ///< snapshot start times, seconds
		Eigen::MatrixXd magnitude; ///< snapshots x lags
		std::vector<bool> valid;
		RVec peak;                 ///< raw matched-filter peak per snapshot
		double sample_rate = 0.0;

		Eigen::Index snapshots() const { return magnitude.rows(); }
	};

	struct CirPeak
	{
		Eigen::Index index;
		double lag; ///< seconds
		double magnitude;
	};

	/// PN probe pulse: one period of the m-sequence as +/-1 chips, one sample per chip.
	BasebandSignal pn_pulse(const MSequenceSpec &spec, double chip_rate);
	/// `count` pulses, one every `period` seconds, silence in between.
	BasebandSignal pulse_train(const BasebandSignal &pulse, double period, int count);

	CirEstimate estimate_cir(const BasebandSignal &rx, const BasebandSignal &pn_template, double pulse_period);

	/// Local maxima of one snapshot at or above `threshold` (relative to the
	/// row peak), at least `min_separation` samples apart, in lag order.
	std::vector<CirPeak> cir_peaks(const CirEstimate &cir, Eigen::Index snapshot, double threshold = 0.1,
	                               Eigen::Index min_separation = 8);

	struct FrequencyResponse
	{
		RVec frequencies; ///< Hz
		RVec power_db;    ///< averaged PSD, dB re 1 (baseband units)/Hz
	};

	/// Averaged periodogram over `repetitions` back-to-back LFM pulses:
	/// Hann segments one LFM long at 75% overlap, wrapping circularly over the
	/// repetition span. Along a chirp time maps to frequency, so the overlap
	/// must make the summed squared window flat. Reported on the bins of [f_low, f_high] (absolute Hz,
	/// defaults to the sweep band) given the receiver centre `f_center`.
	FrequencyResponse measure_frequency_response(const BasebandSignal &rx, const LfmSpec &lfm, int repetitions,
	                                             double f_center = 0.0, double f_low = 0.0, double f_high = 0.0);

	void write_cir_csv(const std::filesystem::path &path, const CirEstimate &cir);
	void write_frequency_response_csv(const std::filesystem::path &path, const FrequencyResponse &fr);
} // namespace uam
