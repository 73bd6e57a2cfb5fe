#include <doctest.h>

#include "uam/dsp.hpp"
#include "uam/rate_adapt.hpp"
#include "uam/rng.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <filesystem>
#include <limits>

using namespace uam;

namespace
{
	Bits random_bits(std::size_t n, SplitMix64 &rng)
	{
		Bits b(n);
		for (auto &v : b)
			v = std::uint8_t(rng() & 1);
		return b;
	}

	OfdmConfig tiny(int blocks, Modulation m = Modulation::DBPSK)
	{
		OfdmConfig c;
		c.n_subcarriers = 64;
		c.bandwidth = 8e3;
		c.guard_time = 4e-3;
		c.preamble_guard_time = 0;
		c.subcarrier_map.assign(64, SubcarrierRole::Data);
		c.blocks_per_frame = blocks;
		c.modulation = m;
		c.preamble = PreambleSpec::pn_autocorr(5);
		return c;
	}

	GroupProfile groups_of(std::vector<double> P)
	{
		GroupProfile gp;
		gp.G = int(P.size());
		gp.group_size = 1;
		gp.P = Eigen::Map<RVec>(P.data(), Eigen::Index(P.size()));
		return gp;
	}

	// Every 0/1 vector meeting the cardinality bound; objective summed in ascending order.
	double brute_force_minimum(const GroupProfile &gp, int required)
	{
		double best = std::numeric_limits<double>::infinity();
		for (std::uint32_t mask = 0; mask < (1u << gp.G); ++mask) {
			if (std::popcount(mask) < required)
				continue;
			std::vector<double> v;
			for (int g = 0; g < gp.G; ++g)
				if (mask >> g & 1)
					v.push_back(gp.P[g]);
			std::sort(v.begin(), v.end());
			double sum = 0;
			for (double x : v)
				sum += x;
			best = std::min(best, sum);
		}
		return best;
	}

	std::filesystem::path temp_file(const char *name) { return std::filesystem::temp_directory_path() / name; }
} // namespace

TEST_CASE("error profile from aligned bit streams")
{
	SplitMix64 rng(1);
	SUBCASE("one packet, one block, one mismatch")
	{
		const auto c = tiny(1);
		Bits tx = random_bits(c.payload_bits(), rng), rx = tx;
		rx[17] ^= 1;
		const auto prof = estimate_error_profile({tx}, {rx}, c, 1, 1);
		CHECK(prof.K == 64);
		CHECK(prof.p_hat[17] == 1.0);
		CHECK(prof.p_hat.sum() == 1.0);
	}
	SUBCASE("two packets of two blocks")
	{
		const auto c = tiny(2);
		std::vector<Bits> tx{random_bits(c.payload_bits(), rng), random_bits(c.payload_bits(), rng)};
		auto rx = tx;
		// subcarrier 5 wrong in (p0, b0) and (p1, b0)
		rx[0][5] ^= 1;
		rx[1][5] ^= 1;
		const auto prof = estimate_error_profile(tx, rx, c, 2, 2);
		CHECK(prof.errors(5, 0, 0) == 1);
		CHECK(prof.errors(5, 0, 1) == 0);
		CHECK(prof.errors(5, 1, 0) == 1);
		CHECK(prof.errors(5, 1, 1) == 0);
		CHECK(prof.p_hat[5] == 0.5);
	}
	SUBCASE("error-free reception")
	{
		const auto c = tiny(2);
		Bits tx = random_bits(c.payload_bits(), rng);
		CHECK(estimate_error_profile({tx}, {tx}, c, 1, 2).p_hat.isZero());
	}
	SUBCASE("DQPSK attributes both bits of a symbol to one subcarrier")
	{
		const auto c = tiny(1, Modulation::DQPSK);
		Bits tx = random_bits(c.payload_bits(), rng), rx = tx;
		rx[2 * 9] ^= 1;
		rx[2 * 9 + 1] ^= 1;
		const auto prof = estimate_error_profile({tx}, {rx}, c, 1, 1);
		CHECK(prof.p_hat[9] == 2.0);
		CHECK(prof.p_hat.maxCoeff() <= prof.bits_per_symbol);
	}
	SUBCASE("lengths must match the configuration")
	{
		const auto c = tiny(2);
		Bits tx = random_bits(c.payload_bits(), rng), shortened(tx.begin(), tx.end() - 1);
		CHECK_THROWS_AS(estimate_error_profile({tx}, {shortened}, c, 1, 2), ParameterError);
		CHECK_THROWS_AS(estimate_error_profile({tx}, {tx}, c, 2, 2), ParameterError);
		CHECK_THROWS_AS(estimate_error_profile({tx}, {tx}, c, 1, 3), ParameterError);
	}
}

TEST_CASE("p_hat is recomputable from the raw counts")
{
	SplitMix64 rng(2);
	const auto c = tiny(4, Modulation::DQPSK);
	std::vector<Bits> tx, rx;
	for (int p = 0; p < 7; ++p) {
		tx.push_back(random_bits(c.payload_bits(), rng));
		rx.push_back(tx.back());
		for (auto &v : rx.back())
			if (rng.uniform() < 0.1)
				v ^= 1;
	}
	const auto prof = estimate_error_profile(tx, rx, c, 7, 4);
	CHECK(prof.recompute() == prof.p_hat);
	// against a direct count over the streams
	for (int k = 0; k < prof.K; ++k) {
		int sum = 0;
		for (int p = 0; p < 7; ++p)
			for (int b = 0; b < 4; ++b)
				for (int j = 0; j < 2; ++j) {
					const std::size_t at = std::size_t(b * 64 * 2 + k * 2 + j);
					sum += tx[std::size_t(p)][at] != rx[std::size_t(p)][at];
				}
		CHECK(prof.p_hat[k] == double(sum) / 28.0);
	}
}

TEST_CASE("grouping")
{
	SubcarrierErrorProfile prof;
	prof.K = 8064;
	prof.p_hat = RVec::Constant(8064, 0.25);
	const auto gp = group_profile(prof, 128);
	CHECK(gp.group_size == 63);
	for (int g = 0; g < gp.G; ++g)
		CHECK(gp.P[g] == doctest::Approx(63 * 0.25));

	SplitMix64 rng(3);
	for (auto &v : prof.p_hat)
		v = rng.uniform();
	const auto id = group_profile(prof, 8064);
	CHECK(id.P == prof.p_hat);
	CHECK(group_profile(prof, 64).P.sum() == doctest::Approx(prof.p_hat.sum()).epsilon(1e-12));
	CHECK_THROWS_AS(group_profile(prof, 100), ParameterError);
	CHECK_THROWS_AS(group_profile(prof, 0), ParameterError);
}

TEST_CASE("selection on small instances")
{
	const auto gp = groups_of({0.10, 0.01, 0.05, 0.02});
	// R G T_P / (N_D N_B) = 0.5 * 4 * 1 / (1 * 1) = 2
	const auto sel = solve_selection(gp, 0.5, 1.0, 1.0, 1);
	CHECK(sel.required == 2);
	CHECK(sel.s == std::vector<std::uint8_t>{0, 1, 0, 1});
	CHECK(sel.objective == doctest::Approx(0.03));
	CHECK(sel.objective == brute_force_minimum(gp, 2));

	const auto none = solve_selection(gp, 0.0, 1.0, 1.0, 1);
	CHECK(none.selected() == 0);
	CHECK(none.objective == 0.0);

	// an exactly integral bound forces no extra group
	CHECK(required_groups(0.75, 4, 1.0, 1.0, 1) == 3);
	CHECK(required_groups(0.7500001, 4, 1.0, 1.0, 1) == 4);
	CHECK_THROWS_AS(required_groups(-1.0, 4, 1.0, 1.0, 1), ParameterError);

	// ties go to the lower index
	const auto tie = solve_selection(groups_of({0.2, 0.1, 0.1, 0.1}), 0.5, 1.0, 1.0, 1);
	CHECK(tie.s == std::vector<std::uint8_t>{0, 1, 1, 0});
}

TEST_CASE("high-rate bound at 80 kbit/s")
{
	// integer form of 80000 * 128 * 0.2097 / (8064 * 4), rounded up
	const long long num = 80000LL * 128 * 2097, den = 8064LL * 4 * 10000;
	const long long oracle = (num + den - 1) / den;
	CHECK(oracle == 67);
	CHECK(required_groups(80e3, 128, 0.2097, 8064, 4) == oracle);

	RateAdaptExperiment ex;
	CHECK(ex.info_bits_per_block() == 8064);
	CHECK(ex.ofdm.frame_period() == doctest::Approx(0.2097));
	CHECK(required_groups(80e3, 128, ex.ofdm.frame_period(), ex.info_bits_per_block(), 4) == 67);

	try {
		required_groups(160e3, 128, 0.2097, 8064, 4);
		FAIL("160 kbit/s should be infeasible");
	} catch (const InfeasibleRate &e) {
		CHECK(e.max_rate == doctest::Approx(8064.0 * 4 / 0.2097));
	}
	CHECK(required_groups(8064.0 * 4 / 0.2097, 128, 0.2097, 8064, 4) == 128);
}

TEST_CASE("greedy selection matches brute force on 200 random instances")
{
	SplitMix64 rng(4);
	for (int trial = 0; trial < 200; ++trial) {
		const int G = 1 + int(rng.bounded(16));
		std::vector<double> P(static_cast<std::size_t>(G));
		const bool coarse = trial % 3 == 0; // coarse values produce ties
		for (auto &v : P)
			v = coarse ? double(rng.bounded(5)) * 0.125 : rng.uniform();
		const auto gp = groups_of(P);
		const double T_P = 0.05 + rng.uniform(), N_D = 1 + double(rng.bounded(100));
		const int N_B = 1 + int(rng.bounded(4));
		const double R = rng.uniform() * N_D * N_B / T_P;
		const auto sel = solve_selection(gp, R, T_P, N_D, N_B);
		CAPTURE(trial);
		CHECK(sel.selected() == sel.required);
		CHECK(double(sel.required) >= R * G * T_P / (N_D * N_B) - 1e-9);
		CHECK(sel.objective == brute_force_minimum(gp, sel.required));
	}
}

TEST_CASE("raising the target rate never lowers the objective")
{
	SplitMix64 rng(5);
	std::vector<double> P(128);
	for (auto &v : P)
		v = rng.uniform() * 3;
	const auto gp = groups_of(P);
	double prev = 0;
	for (double R = 0; R <= 150e3; R += 2.5e3) {
		const double obj = solve_selection(gp, R, 0.2097, 8064, 4).objective;
		CHECK(obj >= prev);
		prev = obj;
	}
}

TEST_CASE("applying a selection")
{
	const auto c = OfdmConfig::high_rate();
	SelectionVector all;
	all.s.assign(128, 1);
	const auto same = apply_selection(c, all);
	CHECK(same.subcarrier_map == c.subcarrier_map);
	CHECK(selection_power_gain(c, same) == 1.0);

	SelectionVector half = all;
	for (std::size_t g = 0; g < 128; g += 2)
		half.s[g] = 0;
	const auto h = apply_selection(c, half);
	CHECK(h.count(SubcarrierRole::Data) == 4032);
	CHECK(h.count(SubcarrierRole::Pilot) == c.count(SubcarrierRole::Pilot));
	const auto data = c.data_indices();
	CHECK(h.subcarrier_map[std::size_t(data[0])] == SubcarrierRole::Null);
	CHECK(h.subcarrier_map[std::size_t(data[63])] == SubcarrierRole::Data);

	SelectionVector none = all;
	std::fill(none.s.begin(), none.s.end(), 0);
	CHECK_THROWS_AS(apply_selection(c, none), ParameterError);
	SelectionVector odd;
	odd.s.assign(100, 1);
	CHECK_THROWS_AS(apply_selection(c, odd), ParameterError);
}

TEST_CASE("survivors carry the released power")
{
	// no pilots, so halving the DATA set halves the active set
	const auto c = tiny(1);
	SelectionVector half;
	half.s = {1, 0, 1, 0, 1, 0, 1, 0};
	const auto h = apply_selection(c, half);
	CHECK(selection_power_gain(c, h) == doctest::Approx(std::sqrt(2.0)));

	SplitMix64 rng(6);
	const auto f0 = OfdmTransceiver(c).build_frame(random_bits(c.payload_bits(), rng));
	const auto f1 = OfdmTransceiver(h).build_frame(random_bits(h.payload_bits(), rng));
	const Eigen::Index at = f0.waveform.size() - c.guard_samples() - c.n_subcarriers;
	const double e0 = f0.waveform.samples.segment(at, c.n_subcarriers).squaredNorm();
	const double e1 = f1.waveform.samples.segment(at, c.n_subcarriers).squaredNorm();
	CHECK(e1 == doctest::Approx(e0).epsilon(1e-9));
	// per surviving subcarrier: twice the power
	const CVec X0 = fft(CVec(f0.waveform.samples.segment(at, c.n_subcarriers)));
	const CVec X1 = fft(CVec(f1.waveform.samples.segment(at, c.n_subcarriers)));
	CHECK(X1.cwiseAbs2().maxCoeff() == doctest::Approx(2 * X0.cwiseAbs2().maxCoeff()).epsilon(1e-9));
}

TEST_CASE("selected frames decode with gaps in the differential chain")
{
	SplitMix64 rng(7);
	const auto c = OfdmConfig::high_rate();
	SelectionVector sel;
	sel.s.assign(128, 1);
	for (int g : {0, 5, 6, 40, 90, 91, 92, 127})
		sel.s[std::size_t(g)] = 0;
	const OfdmTransceiver t(apply_selection(c, sel));
	const Bits b = random_bits(t.config().payload_bits(), rng);
	const auto tx = t.transmit(b);
	CVec x = CVec::Zero(tx.size() + 4000);
	x.segment(1000, tx.size()) = tx.samples;
	const auto r = t.receive(BasebandSignal(x, c.bandwidth), &b);
	REQUIRE(r.diag.detected);
	CHECK(r.diag.bit_errors == 0);
}

TEST_CASE("profile and selection CSV round trip")
{
	SplitMix64 rng(8);
	const auto c = tiny(2);
	std::vector<Bits> tx{random_bits(c.payload_bits(), rng)}, rx = tx;
	rx[0][3] ^= 1;
	rx[0][70] ^= 1;
	const auto prof = estimate_error_profile(tx, rx, c, 1, 2);
	const auto pf = temp_file("uam_profile.csv"), sf = temp_file("uam_selection.csv");
	write_error_profile_csv(pf, prof);
	CHECK(read_error_profile_csv(pf).p_hat == prof.p_hat);

	const auto sel = solve_selection(group_profile(prof, 8), 0.5, 1.0, 1.0, 1);
	write_selection_csv(sf, sel);
	CHECK(read_selection_csv(sf).s == sel.s);
	std::filesystem::remove(pf);
	std::filesystem::remove(sf);
}

TEST_CASE("short closed loop on the notch channel")
{
	RateAdaptExperiment ex;
	ex.training_packets = 4;
	ex.test_packets = 2;
	ex.target_rates = {80e3, 130e3};
	const auto a = run_rate_adaptation(ex);
	REQUIRE(a.points.size() == 2);
	CHECK(a.profile.K == 8064);
	CHECK(a.profile.packets == 4);
	CHECK(a.selections[0].selected() == 67);
	CHECK(a.points[0].throughput <= a.points[1].throughput);
	CHECK(a.points[0].throughput == doctest::Approx(80e3).epsilon(0.01));
	// groups wholly inside the notch are never chosen
	const auto data = ex.ofdm.data_indices();
	for (const auto &sel : a.selections)
		for (int g = 0; g < 128; ++g) {
			const double f0 = ex.ofdm.f_center + (data[std::size_t(g * 63)] - 4096) * ex.ofdm.spacing();
			const double f1 = ex.ofdm.f_center + (data[std::size_t(g * 63 + 62)] - 4096) * ex.ofdm.spacing();
			if (f0 >= 183e3 && f1 <= 197e3)
				CHECK(sel.s[std::size_t(g)] == 0);
		}
	const auto b = run_rate_adaptation(ex);
	CHECK(b.profile.p_hat == a.profile.p_hat);
	CHECK(b.points[1].bit_errors == a.points[1].bit_errors);
}
