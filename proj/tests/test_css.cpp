#include <doctest.h>

#include "uam/channel.hpp"
#include "uam/css.hpp"
#include "uam/dsp.hpp"
#include "uam/rng.hpp"

#include <cmath>

using namespace uam;

namespace
{
	Bits random_bits(std::size_t n, SplitMix64 &rng)
	{
		Bits b(n);
		for (auto &v : b)
			v = rng() & 1;
		return b;
	}

	CVec awgn(const CVec &x, double snr_db, SplitMix64 &rng, Eigen::Index lead = 0, Eigen::Index tail = 0)
	{
		CVec y = CVec::Zero(x.size() + lead + tail);
		y.segment(lead, x.size()) = x;
		const double var = 1.0 / db_to_power(snr_db);
		for (auto &v : y)
			v += rng.complex_normal(var);
		return y;
	}
} // namespace

TEST_CASE("css framing")
{
	const CssConfig c = CssConfig::forward();
	CHECK(c.chirp_samples() == 125);
	CHECK(c.guard_samples() == 31);
	CHECK(CssConfig::feedback().bandwidth == 31.125e3);
	CHECK(CssConfig::feedback().chirp_duration == 4e-3);

	const BasebandSignal empty = css_modulate({}, c);
	CHECK(empty.size() == 32 * c.symbol_samples());
	CHECK(empty.samples == css_sync_waveform(c).samples);

	CssConfig bad = c;
	bad.chirp_duration = 0;
	CHECK_THROWS_AS(css_modulate({1}, bad), ParameterError);
}

TEST_CASE("a single 1 is an up-chirp")
{
	const CssConfig c = CssConfig::forward();
	const BasebandSignal s = css_modulate({1}, c);
	const CVec sym = s.samples.segment(32 * c.symbol_samples(), c.chirp_samples());
	const CVec up = css_up_chirp(c).samples, down = css_down_chirp(c).samples;
	CHECK((sym - up).cwiseAbs().maxCoeff() < 1e-12);

	const double r_up = matched_filter(sym, up).cwiseAbs().maxCoeff();
	const double r_down = matched_filter(sym, down).cwiseAbs().maxCoeff();
	CHECK(r_up >= 10 * r_down);
	// guard after the chirp is silent
	CHECK(s.samples.tail(c.guard_samples()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("noiseless css loopback")
{
	SplitMix64 rng(1);
	const CssConfig c = CssConfig::forward();
	for (int trial = 0; trial < 20; ++trial) {
		const Bits b = random_bits(8, rng);
		const CssResult r = css_demodulate(css_modulate(b, c), c);
		REQUIRE(r.detected);
		CHECK(r.start == 0);
		CHECK(r.bits == b);
	}
	// oversampled feedback link
	CssConfig fb = CssConfig::feedback();
	fb.sample_rate = 125e3;
	const Bits b = random_bits(40, rng);
	CHECK(css_demodulate(css_modulate(b, fb), fb).bits == b);
}

TEST_CASE("css amplitude invariance")
{
	SplitMix64 rng(2);
	const CssConfig c = CssConfig::forward();
	const Bits b = random_bits(200, rng);
	const CVec y = awgn(css_modulate(b, c).samples, -12.0, rng, 300, 300);
	const CssResult r1 = css_demodulate(BasebandSignal(y, c.rate()), c, b.size());
	for (double k : {1e-3, 0.37, 250.0}) {
		const CssResult rk = css_demodulate(BasebandSignal(CVec(k * y), c.rate()), c, b.size());
		CHECK(rk.detected == r1.detected);
		CHECK(rk.bits == r1.bits);
	}
}

TEST_CASE("css at -5 dB delivers 64-byte packets")
{
	SplitMix64 rng(3);
	const CssConfig c = CssConfig::forward();
	int ok = 0;
	const int packets = 1000;
	for (int p = 0; p < packets; ++p) {
		const Bits b = random_bits(512, rng);
		const CVec y = awgn(css_modulate(b, c).samples, -5.0, rng, 200, 50);
		const CssResult r = css_demodulate(BasebandSignal(y, c.rate()), c, b.size());
		ok += r.detected && r.bits == b;
	}
	CHECK(double(ok) / packets > 0.99);
}

TEST_CASE("css noise-only false alarms")
{
	SplitMix64 rng(4);
	const CssConfig c = CssConfig::forward();
	int alarms = 0;
	const int trials = 2000;
	for (int t = 0; t < trials; ++t) {
		CVec n(12000);
		for (auto &v : n)
			v = rng.complex_normal(1.0);
		alarms += css_demodulate(BasebandSignal(n, c.rate()), c).detected;
	}
	CHECK(double(alarms) / trials < 1e-3);
}

TEST_CASE("css errors are symmetric in 0s and 1s")
{
	SplitMix64 rng(5);
	const CssConfig c = CssConfig::forward();
	long err[2] = {0, 0}, count[2] = {0, 0};
	for (int p = 0; p < 40; ++p) {
		const Bits b = random_bits(1000, rng);
		const CVec y = awgn(css_modulate(b, c).samples, -14.0, rng, 100, 100);
		const CssResult r = css_demodulate(BasebandSignal(y, c.rate()), c, b.size());
		REQUIRE(r.detected);
		REQUIRE(r.bits.size() == b.size());
		for (std::size_t i = 0; i < b.size(); ++i) {
			++count[b[i]];
			err[b[i]] += r.bits[i] != b[i];
		}
	}
	const double p0 = double(err[0]) / double(count[0]), p1 = double(err[1]) / double(count[1]);
	REQUIRE(p0 > 1e-3); // enough errors for the comparison to mean something
	// binomial tolerance: 4 standard deviations of the difference
	const double sd = std::sqrt(p0 * (1 - p0) / double(count[0]) + p1 * (1 - p1) / double(count[1]));
	CHECK(std::abs(p0 - p1) < 4 * sd);
}

TEST_CASE("22 dB attenuation over the default channel loses some but not most packets")
{
	SplitMix64 rng(6);
	const CssConfig c = CssConfig::forward();
	ChannelModel m = ChannelModel::marina();
	m.attenuation_db = 22.0;
	int lost = 0;
	const int packets = 100;
	for (int p = 0; p < packets; ++p) {
		const Bits b = random_bits(8 * (64 + 10), rng);
		const BasebandSignal tx = css_modulate(b, c);
		CVec padded = CVec::Zero(tx.size() + 2000);
		padded.segment(500, tx.size()) = tx.samples;
		m.rng_seed = rng();
		const CssResult r = css_demodulate(propagate(BasebandSignal(padded, c.rate()), c.f_center, m), c, b.size());
		lost += !(r.detected && r.bits == b);
	}
	const double loss = double(lost) / packets;
	MESSAGE("64-byte packet loss at 22 dB attenuation: " << loss);
	CHECK(loss > 0.0);
	CHECK(loss < 0.5);
}
