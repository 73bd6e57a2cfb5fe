#pragma once

#include "uam/signal.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>

namespace uam
{
	class IoError : public std::runtime_error
	{
	public:
		explicit IoError(const std::string &what) : std::runtime_error(what) {}
	};

	/// Sidecar metadata stored next to a raw I/Q file.
	struct IqMetadata
	{
		double sample_rate = 0.0;
		double center_frequency = 0.0;
		std::string domain = "baseband"; ///< "baseband" or "passband" (real samples, Q = 0)
	};

	struct IqRecording
	{
		BasebandSignal signal;
		IqMetadata meta;
	};

	/// `capture.iq` -> `capture.json`
	std::filesystem::path sidecar_path(const std::filesystem::path &iq_path);

	/// Little-endian float32 interleaved I/Q, no header, plus the JSON sidecar.
	void write_iq(const std::filesystem::path &path, const BasebandSignal &sig, double center_frequency);
	void write_iq(const std::filesystem::path &path, const PassbandSignal &sig);

	IqRecording read_iq(const std::filesystem::path &path);

	/// Real part of a passband recording.
	PassbandSignal as_passband(const IqRecording &rec);
} // namespace uam
