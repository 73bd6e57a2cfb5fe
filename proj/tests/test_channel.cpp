#include <doctest.h>

#include "uam/channel.hpp"
#include "uam/dsp.hpp"
#include "uam/ofdm.hpp"
#include "uam/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

using namespace uam;
using std::numbers::pi;

namespace
{
	CVec bandlimited(Eigen::Index n, double bw, double fs, std::uint64_t seed)
	{
		SplitMix64 rng(seed);
		CVec spec(n);
		for (Eigen::Index k = 0; k < n; ++k) {
			const double f = (k <= n / 2 ? double(k) : double(k - n)) * fs / double(n);
			spec[k] = std::abs(f) < bw / 2 ? rng.complex_normal(1.0) : cplx(0);
		}
		CVec x = ifft(spec);
		// taper so the burst edges do not splatter
		for (Eigen::Index i = 0; i < n; ++i)
			x[i] *= 0.5 - 0.5 * std::cos(2 * pi * double(i) / double(n - 1));
		return x / std::sqrt(x.squaredNorm() / double(n));
	}

	RVec random_real(Eigen::Index n, std::uint64_t seed)
	{
		SplitMix64 rng(seed);
		RVec x(n);
		for (auto &v : x)
			v = rng.normal();
		return x;
	}
} // namespace

TEST_CASE("identity channel is exact")
{
	const RVec x = random_real(5000, 3);
	const PassbandSignal out = propagate(PassbandSignal(x, 1e6), ChannelModel::identity());
	REQUIRE(out.size() == x.size());
	CHECK((out.samples - x).cwiseAbs().maxCoeff() == 0.0);

	const CVec b = bandlimited(4000, 20e3, 100e3, 4);
	const BasebandSignal bo = propagate(BasebandSignal(b, 100e3), 100e3, ChannelModel::identity());
	CHECK((bo.samples - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("two taps 5 ms apart on an impulse")
{
	const double fs = 1e6;
	RVec x = RVec::Zero(100);
	x[10] = 1.0;
	ChannelModel m;
	m.taps = {{0.0, 1.0}, {5e-3, 0.5}};
	const PassbandSignal y = propagate(PassbandSignal(x, fs), m);
	CHECK(y.size() == 100 + 5000);
	Eigen::Index i1;
	y.samples.head(1000).cwiseAbs().maxCoeff(&i1);
	Eigen::Index i2;
	y.samples.tail(y.size() - 1000).cwiseAbs().maxCoeff(&i2);
	i2 += 1000;
	CHECK(i1 == 10);
	CHECK(i2 - i1 == 5000);
	CHECK(20 * std::log10(std::abs(y.samples[i1] / y.samples[i2])) == doctest::Approx(6.0206).epsilon(1e-6));
}

TEST_CASE("noise variance matches the configured PSD")
{
	ChannelModel m;
	const double fs = 1e6, sigma2 = 0.04;
	m.noise_psd = 2 * sigma2 / fs; // passband variance = N0 fs / 2
	m.rng_seed = 99;
	const PassbandSignal y = propagate(PassbandSignal(RVec::Zero(1000000), fs), m);
	CHECK(y.samples.squaredNorm() / double(y.size()) == doctest::Approx(sigma2).epsilon(0.05));

	const double bb_fs = 100e3;
	const BasebandSignal z = propagate(BasebandSignal(CVec::Zero(1000000), bb_fs), 100e3, m);
	CHECK(z.samples.squaredNorm() / double(z.size()) == doctest::Approx(baseband_noise_variance(m, bb_fs)).epsilon(0.05));
}

TEST_CASE("determinism, linearity and energy")
{
	ChannelModel m = ChannelModel::marina();
	m.noise_psd = 1e-7;
	m.rng_seed = 1234;
	const BasebandSignal x(bandlimited(20000, 80e3, 100e3, 7), 100e3);
	const auto a = propagate(x, 100e3, m), b = propagate(x, 100e3, m);
	CHECK(a.samples == b.samples);

	// multipath is linear once the (seed-identical) noise is removed
	const double alpha = 3.7;
	const BasebandSignal zero(CVec::Zero(x.size()), x.sample_rate);
	const CVec noise = propagate(zero, 100e3, m).samples;
	const CVec lhs = propagate(BasebandSignal(alpha * x.samples, x.sample_rate), 100e3, m).samples - noise;
	const CVec rhs = alpha * (a.samples - noise);
	CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9);

	ChannelModel att;
	att.attenuation_db = 7.5;
	const double e_in = x.samples.squaredNorm();
	const double e_out = propagate(x, 100e3, att).samples.squaredNorm();
	CHECK(e_out / e_in == doctest::Approx(std::pow(10.0, -0.75)).epsilon(1e-6));
}

TEST_CASE("baseband-equivalent channel agrees with the passband channel")
{
	// Independent path: up-convert, run the real passband channel, down-convert.
	const double bb_fs = 50e3, fc = 100e3, pb_fs = 1e6;
	const BasebandSignal x(bandlimited(6000, 30e3, bb_fs, 11), bb_fs);
	ChannelModel m = ChannelModel::marina();
	m.taps[1].gain *= std::polar(1.0, 0.7);
	m.taps.push_back({2.2345e-3, 0.3});
	m.doppler_scale = 1.0003;
	m.noise_psd = 0;

	const BasebandSignal bb = propagate(x, fc, m);
	const PassbandSignal pb = propagate(digital_up_convert(x, fc, pb_fs), m);
	const BasebandSignal back = digital_down_convert(pb, fc, bb_fs);
	const Eigen::Index n = std::min(bb.size(), back.size()) - 400;
	const CVec diff = bb.samples.segment(200, n) - 2.0 * back.samples.segment(200, n);
	const double err_db = 10 * std::log10(diff.squaredNorm() / bb.samples.segment(200, n).squaredNorm());
	CHECK(err_db < -35.0);
}

TEST_CASE("Doppler scale moves a tone to f * a")
{
	const double fs = 1e6, f = 100e3, a = 1.001;
	const Eigen::Index n = 1 << 18;
	RVec x(n);
	for (Eigen::Index i = 0; i < n; ++i)
		x[i] = std::cos(2 * pi * f * double(i) / fs);
	ChannelModel m;
	m.doppler_scale = a;
	const PassbandSignal y = propagate(PassbandSignal(x, fs), m);
	CVec s = fft(CVec(y.samples.head(n).cast<cplx>()));
	Eigen::Index k;
	s.head(n / 2).cwiseAbs().maxCoeff(&k);
	CHECK(std::abs(double(k) * fs / double(n) - f * a) <= fs / double(n));
}

TEST_CASE("snr_at_receiver")
{
	const double fs = 50e3;
	const Eigen::Index n = 20000;
	CVec x(n);
	for (Eigen::Index i = 0; i < n; ++i)
		x[i] = std::polar(1.0, 2 * pi * 3e3 * double(i) / fs);
	const BasebandSignal tx(x, fs);

	ChannelModel m;
	m.noise_psd = noise_psd_for_snr(20.0, 1.0, fs);
	CHECK(snr_at_receiver(m, tx, 100e3) == doctest::Approx(20.0).epsilon(0.1 / 20));

	// measured through the channel: received power over noise variance
	const BasebandSignal y = propagate(tx, 100e3, m);
	const double noise = (y.samples - x).squaredNorm() / double(n);
	CHECK(power_to_db(1.0 / noise) == doctest::Approx(20.0).epsilon(0.1 / 20));

	ChannelModel m2 = m;
	m2.attenuation_db += 2.5;
	CHECK(snr_at_receiver(m, tx, 100e3) - snr_at_receiver(m2, tx, 100e3) == doctest::Approx(2.5).epsilon(1e-9));

	CHECK(snr_at_receiver(ChannelModel::identity(), tx, 100e3) == std::numeric_limits<double>::infinity());

	// a wider noise reference band collects proportionally more noise
	CHECK(snr_at_receiver(m, tx, 100e3, 2 * fs) == doctest::Approx(20.0 - 10 * std::log10(2.0)));

	// zero-padded silence does not dilute the signal power
	CVec padded = CVec::Zero(2 * n);
	padded.head(n) = x;
	CHECK(snr_at_receiver(m, BasebandSignal(padded, fs), 100e3) == doctest::Approx(20.0).epsilon(0.1 / 20));

	// passband overload: unit-amplitude cosine has power 1/2
	const double pfs = 1e6;
	RVec p(200000);
	for (Eigen::Index i = 0; i < p.size(); ++i)
		p[i] = std::cos(2 * pi * 100e3 * double(i) / pfs);
	ChannelModel mp;
	mp.noise_psd = 0.5 / (db_to_power(10.0) * 20e3);
	CHECK(snr_at_receiver(mp, PassbandSignal(p, pfs), 90e3, 110e3) == doctest::Approx(10.0).epsilon(1e-3));
}

TEST_CASE("response curve and absorption shape the band")
{
	const double fs = 100e3, fc = 100e3;
	ChannelModel m;
	m.response_curve = {{50e3, 0.0}, {100e3, -10.0}, {150e3, 0.0}};
	CHECK(20 * std::log10(shaping_gain(m, 75e3)) == doctest::Approx(-5.0));
	CHECK(20 * std::log10(shaping_gain(m, 20e3)) == doctest::Approx(0.0)); // clamped

	for (double f : {-30e3, 0.0, 20e3}) {
		const Eigen::Index n = 40000;
		CVec x(n);
		for (Eigen::Index i = 0; i < n; ++i)
			x[i] = std::polar(1.0, 2 * pi * f * double(i) / fs);
		const CVec y = propagate(BasebandSignal(x, fs), fc, m).samples.segment(2000, n - 4000);
		const double measured = 10 * std::log10(y.squaredNorm() / double(y.size()));
		CHECK(measured == doctest::Approx(20 * std::log10(shaping_gain(m, fc + f))).epsilon(0.02));
	}

	// Thorp at 10 kHz is about 1.2 dB/km; absorption grows with frequency
	CHECK(thorp_absorption_db_per_km(10e3) == doctest::Approx(1.19).epsilon(0.05));
	CHECK(thorp_absorption_db_per_km(100e3) > thorp_absorption_db_per_km(50e3));
	ChannelModel t;
	t.thorp_range = 500;
	CHECK(20 * std::log10(shaping_gain(t, 100e3)) == doctest::Approx(-0.5 * thorp_absorption_db_per_km(100e3)));
}

TEST_CASE("time-varying profile")
{
	TimeVaryingProfile p;
	p.times = {0.0, 1.0, 3.0};
	p.gains = {{1.0, 0.0, 2.0}};
	p.duration = 3.0;
	CHECK(p.gain_at(0, 0.5).real() == doctest::Approx(0.5));
	CHECK(p.gain_at(0, 2.0).real() == doctest::Approx(1.0));
	CHECK(p.gain_at(0, 9.0).real() == doctest::Approx(2.0));

	ChannelModel m;
	m.profile = p;
	const double fs = 1000;
	const CVec ones = CVec::Ones(3000);
	const CVec y = propagate(BasebandSignal(ones, fs), 0.0, m).samples;
	CHECK(std::abs(y[500]) == doctest::Approx(0.5));
	CHECK(std::abs(y[2000]) == doctest::Approx(1.0));

	TimeVaryingProfile bad = p;
	bad.duration = 2.0;
	m.profile = bad;
	CHECK_THROWS_AS(m.validate(), ParameterError);
}

TEST_CASE("channel configuration files")
{
	const ChannelModel m = channel_model_from_json(R"({"schema_version": 1, "preset": "marina", "noise_psd": 1e-9,
		"interferers": [{"frequency": 166000, "power": 0.01}], "response_curve": [[50000, 0], [150000, -3]]})");
	CHECK(m.taps.size() == 4);
	CHECK(m.taps[3].delay == doctest::Approx(5e-3));
	CHECK(std::abs(m.taps[1].gain) == doctest::Approx(std::pow(10.0, -6.0 / 20)));
	CHECK(m.interferers.size() == 1);
	CHECK(m.response_curve.size() == 2);

	CHECK_THROWS_AS(channel_model_from_json(R"({"schema_version": 1, "noise": 1})"), ParameterError);
	CHECK_THROWS_AS(channel_model_from_json(R"({"taps": []})"), ParameterError);
	CHECK_THROWS_AS(channel_model_from_json(R"({"schema_version": 1, "taps": [{"delay": -1}]})"), ParameterError);

	const ChannelModel back = channel_model_from_json(channel_model_to_json(m));
	CHECK(channel_model_to_json(back) == channel_model_to_json(m));

	ChannelModel traced;
	load_cir_trace_text("time,delay,gain_db,phase_deg\n0,0,0,0\n0,0.002,-6,0\n10,0,0,0\n10,0.002,-12,90\n", traced);
	REQUIRE(traced.taps.size() == 2);
	CHECK(traced.taps[1].delay == doctest::Approx(2e-3));
	// complex gains interpolate linearly between knots
	CHECK(std::abs(traced.profile->gain_at(1, 5.0)) == doctest::Approx(std::abs(cplx(0.501187, 0.251189) / 2.0)).epsilon(1e-5));
	CHECK_THROWS_AS(load_cir_trace_text("time,delay,gain_db,phase_deg\n0,0,0,0\n1,0.001,0,0\n", traced), ParameterError);
}

TEST_CASE("half-duplex medium")
{
	const double fs = 50e3, fc = 100e3;
	ChannelModel m;
	m.taps = {{10e-3, 1.0}};
	m.turnaround = 3e-3;
	HalfDuplexMedium medium(m, fc, fs);
	const int a = medium.add_endpoint("A"), b = medium.add_endpoint("B");

	const BasebandSignal burst(CVec::Ones(500), fs); // 10 ms
	SUBCASE("happy path: delivery after the first-tap delay")
	{
		medium.transmit(a, 0.0, burst, "DATA");
		const CVec rx = medium.receive(b, 0.0, 0.05).samples;
		CHECK(std::abs(rx[499]) == 0.0);
		CHECK(std::abs(rx[500]) == doctest::Approx(1.0));
		CHECK(std::abs(rx[999]) == doctest::Approx(1.0));
		CHECK(std::abs(rx[1000]) == 0.0);

		// B replies after the turnaround, A hears it 10 ms later
		const double reply = 0.02 + m.turnaround;
		medium.transmit(b, reply, burst, "ACK");
		const CVec back = medium.receive(a, 0.0, 0.1).samples;
		const auto start = static_cast<Eigen::Index>(std::llround((reply + 10e-3) * fs));
		CHECK(std::abs(back[start - 1]) == 0.0);
		CHECK(std::abs(back[start]) == doctest::Approx(1.0));
		REQUIRE(medium.log().size() == 4);
		CHECK(medium.log()[0].label == "DATA");
		CHECK(medium.log()[2].label == "ACK");
	}
	SUBCASE("reply inside the turnaround window is still sent and heard")
	{
		ChannelModel z = m;
		z.taps = {{0.0, 1.0}};
		HalfDuplexMedium near(z, fc, fs);
		const int na = near.add_endpoint("A"), nb = near.add_endpoint("B");
		near.transmit(na, 0.0, burst);                  // A ends at 10 ms
		near.transmit(nb, 0.011, burst);                // B starts 1 ms later
		CHECK(near.muted(na, 0.0115));                  // A is still switching
		CHECK_FALSE(near.muted(na, 0.0135));
		CHECK(near.muted(nb, 0.0125));                  // B is deaf while it sends
		const CVec at_a = near.receive(na, 0.0, 0.03).samples;
		const auto mute_end = static_cast<Eigen::Index>(std::llround(0.013 * fs));
		CHECK(std::abs(at_a[mute_end - 1]) == 0.0);     // head of the reply lost to the mute
		CHECK(std::abs(at_a[mute_end]) == doctest::Approx(1.0));
		CHECK(std::abs(at_a[static_cast<Eigen::Index>(0.0205 * fs)]) == doctest::Approx(1.0));
	}
	SUBCASE("monitor hears the alternation")
	{
		const int mon = medium.add_endpoint("monitor");
		medium.transmit(a, 0.0, burst, "DATA");
		medium.transmit(b, 0.05, burst, "ACK");
		const CVec rx = medium.receive(mon, 0.0, 0.1).samples;
		CHECK(std::abs(rx[static_cast<Eigen::Index>(0.015 * fs)]) == doctest::Approx(1.0));
		CHECK(std::abs(rx[static_cast<Eigen::Index>(0.040 * fs)]) == 0.0);
		CHECK(std::abs(rx[static_cast<Eigen::Index>(0.065 * fs)]) == doctest::Approx(1.0));
	}
}

TEST_CASE("simultaneous OFDM transmissions collide")
{
	OfdmConfig cfg = OfdmConfig::marina_100k_dbpsk();
	cfg.blocks_per_frame = 1;
	const double fs = cfg.sample_rate();
	ChannelModel m;
	m.taps = {{2e-3, 1.0}};
	m.noise_psd = noise_psd_for_snr(30.0, 1.0, fs);
	HalfDuplexMedium medium(m, cfg.f_center, fs);
	const int a = medium.add_endpoint("A"), b = medium.add_endpoint("B"), mon = medium.add_endpoint("monitor");

	SplitMix64 rng(5);
	Bits ba(cfg.payload_bits()), bb(cfg.payload_bits());
	for (auto &v : ba)
		v = rng() & 1;
	for (auto &v : bb)
		v = rng() & 1;
	const BasebandSignal wa = ofdm_transmit(ba, cfg), wb = ofdm_transmit(bb, cfg);
	medium.transmit(a, 0.01, wa);
	medium.transmit(b, 0.01, wb);
	const double end = 0.01 + wa.duration() + 0.05;

	// each end is deaf while sending, so neither decodes the other
	CHECK_FALSE(ofdm_receive(medium.receive(a, 0.0, end), cfg).diag.detected);
	CHECK_FALSE(ofdm_receive(medium.receive(b, 0.0, end), cfg).diag.detected);

	// the monitor hears the sum; neither payload survives
	const BasebandSignal heard = medium.receive(mon, 0.0, end);
	const RxResult ra = ofdm_receive(heard, cfg, &ba), rb = ofdm_receive(heard, cfg, &bb);
	CHECK((!ra.diag.detected || ra.diag.ber > 0.1));
	CHECK((!rb.diag.detected || rb.diag.ber > 0.1));

	// sanity: a lone transmission through the same medium decodes
	HalfDuplexMedium lone(m, cfg.f_center, fs);
	const int la = lone.add_endpoint("A"), lb = lone.add_endpoint("B");
	lone.transmit(la, 0.01, wa);
	const RxResult ok = ofdm_receive(lone.receive(lb, 0.0, end), cfg, &ba);
	CHECK(ok.diag.detected);
	CHECK(ok.diag.ber == 0.0);
}
