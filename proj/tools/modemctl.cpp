// modemctl: runs modem experiments and waveform streaming from the shell.

#include "uam/experiments.hpp"
#include "uam/iq_file.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace
{
	std::string slurp(const std::string &path)
	{
		if (path.empty())
			return {};
		std::ifstream in(path, std::ios::binary);
		if (!in)
			throw uam::IoError("cannot read " + path);
		std::ostringstream s;
		s << in.rdbuf();
		return s.str();
	}

	void spill(const std::filesystem::path &path, const std::string &text)
	{
		std::ofstream out(path, std::ios::binary);
		if (!out || !(out << text))
			throw uam::IoError("cannot write " + path.string());
	}

	/// results.csv + "_peaks" -> results_peaks.csv
	std::filesystem::path beside(const std::filesystem::path &out, const std::string &suffix)
	{
		std::filesystem::path p = out;
		p.replace_filename(out.stem().string() + suffix + out.extension().string());
		return p;
	}

	struct Args
	{
		std::string config, out, in;
		std::optional<std::uint64_t> seed;
		bool dry_run = false;
	};
} // namespace

int main(int argc, char **argv)
{
	CLI::App app{"Underwater acoustic modem experiments"};
	app.require_subcommand(1);
	Args a;

	const std::vector<std::pair<std::string, std::string>> experiments{
		{"ber-sweep", "uncoded BER against SNR for the OFDM configurations"},
		{"high-rate", "coded frames in the high-rate configuration"},
		{"rate-adapt", "subcarrier selection and closed-loop test traffic"},
		{"arq", "stop-and-wait file transfer over a packet size sweep"},
		{"probe-cir", "channel impulse response from m-sequence pulses"},
		{"probe-freq", "magnitude response from repeated chirps"},
		{"loopback", "OFDM frames through a channel"},
	};
	for (const auto &[name, help] : experiments) {
		CLI::App *sub = app.add_subcommand(name, help);
		sub->add_option("--config", a.config, "JSON configuration")->check(CLI::ExistingFile);
		sub->add_option("--seed", a.seed, "master seed (overrides the config)");
		sub->add_option("--out", a.out, "CSV output path")->required();
		sub->add_flag("--dry-run", a.dry_run, "print the resolved configuration and exit");
	}
	for (const char *name : {"stream-tx", "stream-rx"}) {
		CLI::App *sub = app.add_subcommand(name, std::string(name) == "stream-tx"
		                                             ? "render a baseband IQ file onto the medium"
		                                             : "play a medium IQ file through the channel and record it");
		sub->add_option("--config", a.config, "JSON configuration")->check(CLI::ExistingFile);
		sub->add_option("--seed", a.seed, "master seed (overrides the config)");
		sub->add_option("--in", a.in, "input IQ file")->required()->check(CLI::ExistingFile);
		sub->add_option("--out", a.out, "output IQ file")->required();
	}

	try {
		app.parse(argc, argv);
	} catch (const CLI::ParseError &e) {
		return app.exit(e);
	}

	const std::string verb = app.get_subcommands().front()->get_name();
	try {
		const std::string config = slurp(a.config);
		if (verb == "stream-tx" || verb == "stream-rx") {
			const uam::StreamSpec spec = uam::parse_stream_spec(config, a.seed);
			if (verb == "stream-tx")
				uam::stream_tx(a.in, a.out, spec);
			else
				uam::stream_rx(a.in, a.out, spec);
			return 0;
		}
		if (a.dry_run) {
			std::cout << uam::resolve_experiment(verb, config, a.seed) << '\n';
			return 0;
		}
		const uam::ExperimentOutput out = uam::run_experiment(verb, config, a.seed);
		spill(a.out, out.main);
		for (const auto &[suffix, text] : out.extra)
			spill(beside(a.out, suffix), text);
	} catch (const std::exception &e) {
		std::cerr << "modemctl " << verb << ": " << e.what() << '\n';
		return 1;
	}
	return 0;
}
