#include "uam/iq_file.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace uam
{
	namespace
	{
		static_assert(sizeof(float) == 4);

		void put_le(std::vector<char> &buf, float v)
		{
			std::uint32_t u = std::bit_cast<std::uint32_t>(v);
			if constexpr (std::endian::native == std::endian::big)
				u = __builtin_bswap32(u);
			char b[4];
			std::memcpy(b, &u, 4);
			buf.insert(buf.end(), b, b + 4);
		}

		float get_le(const char *p)
		{
			std::uint32_t u;
			std::memcpy(&u, p, 4);
			if constexpr (std::endian::native == std::endian::big)
				u = __builtin_bswap32(u);
			return std::bit_cast<float>(u);
		}

		void write_payload(const std::filesystem::path &path, const std::vector<char> &buf, const IqMetadata &meta)
		{
			std::ofstream out(path, std::ios::binary | std::ios::trunc);
			if (!out)
				throw IoError("cannot open " + path.string() + " for writing");
			out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
			if (!out)
				throw IoError("write failed on " + path.string());

			nlohmann::ordered_json j;
			j["format"] = "cf32le";
			j["sample_rate"] = meta.sample_rate;
			j["center_frequency"] = meta.center_frequency;
			j["domain"] = meta.domain;
			std::ofstream side(sidecar_path(path), std::ios::trunc);
			if (!side)
				throw IoError("cannot open sidecar " + sidecar_path(path).string());
			side << j.dump(2) << "\n";
		}
	} // namespace

	std::filesystem::path sidecar_path(const std::filesystem::path &iq_path)
	{
		auto p = iq_path;
		p.replace_extension(".json");
		return p;
	}

	void write_iq(const std::filesystem::path &path, const BasebandSignal &sig, double center_frequency)
	{
		std::vector<char> buf;
		buf.reserve(static_cast<std::size_t>(sig.size()) * 8);
		for (Eigen::Index i = 0; i < sig.size(); ++i) {
			put_le(buf, static_cast<float>(sig.samples[i].real()));
			put_le(buf, static_cast<float>(sig.samples[i].imag()));
		}
		write_payload(path, buf, {sig.sample_rate, center_frequency, "baseband"});
	}

	void write_iq(const std::filesystem::path &path, const PassbandSignal &sig)
	{
		std::vector<char> buf;
		buf.reserve(static_cast<std::size_t>(sig.size()) * 8);
		for (Eigen::Index i = 0; i < sig.size(); ++i) {
			put_le(buf, static_cast<float>(sig.samples[i]));
			put_le(buf, 0.0f);
		}
		write_payload(path, buf, {sig.sample_rate, 0.0, "passband"});
	}

	IqRecording read_iq(const std::filesystem::path &path)
	{
		std::ifstream side(sidecar_path(path));
		if (!side)
			throw IoError("missing sidecar " + sidecar_path(path).string());
		IqMetadata meta;
		try {
			const auto j = nlohmann::json::parse(side);
			if (j.value("format", "cf32le") != "cf32le")
				throw IoError("unsupported sample format in " + sidecar_path(path).string());
			meta.sample_rate = j.at("sample_rate").get<double>();
			meta.center_frequency = j.value("center_frequency", 0.0);
			meta.domain = j.value("domain", "baseband");
		} catch (const nlohmann::json::exception &e) {
			throw IoError("bad sidecar " + sidecar_path(path).string() + ": " + e.what());
		}

		std::ifstream in(path, std::ios::binary);
		if (!in)
			throw IoError("cannot open " + path.string());
		std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
		if (buf.size() % 8)
			throw IoError(path.string() + ": size is not a whole number of I/Q pairs");
		CVec s(static_cast<Eigen::Index>(buf.size() / 8));
		for (Eigen::Index i = 0; i < s.size(); ++i) {
			const char *p = buf.data() + 8 * i;
			s[i] = {get_le(p), get_le(p + 4)};
		}
		try {
			return {BasebandSignal(std::move(s), meta.sample_rate), meta};
		} catch (const ParameterError &e) {
			throw IoError(path.string() + ": " + e.what());
		}
	}

	PassbandSignal as_passband(const IqRecording &rec)
	{
		return {rec.signal.samples.real(), rec.signal.sample_rate};
	}
} // namespace uam
