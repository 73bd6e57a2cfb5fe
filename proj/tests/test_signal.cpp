#include <doctest.h>

#include "uam/dsp.hpp"
#include "uam/iq_file.hpp"
#include "uam/rng.hpp"
#include "uam/sequences.hpp"

#include <filesystem>
#include <numbers>

using namespace uam;
using std::numbers::pi;

namespace
{
	CVec tone(double f, double fs, Eigen::Index n, double amp = 1.0)
	{
		CVec x(n);
		for (Eigen::Index i = 0; i < n; ++i)
			x[i] = std::polar(amp, 2 * pi * f * double(i) / fs);
		return x;
	}

	CVec random_cvec(Eigen::Index n, std::uint64_t seed)
	{
		SplitMix64 rng(seed);
		CVec x(n);
		for (auto &v : x)
			v = rng.complex_normal(1.0);
		return x;
	}

	// Band-limited noise: random spectrum confined to |f| < bw/2.
	CVec bandlimited(Eigen::Index n, double bw, double fs, std::uint64_t seed)
	{
		CVec spec = random_cvec(n, seed);
		for (Eigen::Index k = 0; k < n; ++k) {
			const double f = (k <= n / 2 ? double(k) : double(k - n)) * fs / double(n);
			if (std::abs(f) >= bw / 2)
				spec[k] = 0;
		}
		CVec x = ifft(spec);
		return x / std::sqrt(x.squaredNorm() / double(n));
	}

	// Frequency of the largest FFT bin, using an independent radix-free DFT index mapping.
	double peak_frequency(const CVec &x, double fs, Eigen::Index nfft)
	{
		CVec p = CVec::Zero(nfft);
		p.head(std::min(nfft, x.size())) = x.head(std::min(nfft, x.size()));
		CVec s = fft(p);
		Eigen::Index k;
		s.cwiseAbs().maxCoeff(&k);
		return (k <= nfft / 2 ? double(k) : double(k - nfft)) * fs / double(nfft);
	}

	double peak_frequency_real(const RVec &x, double fs)
	{
		CVec c = x.cast<cplx>();
		CVec s = fft(c);
		Eigen::Index k;
		s.head(x.size() / 2).cwiseAbs().maxCoeff(&k);
		return double(k) * fs / double(x.size());
	}

	CVec direct_xcorr(const CVec &a, const CVec &b)
	{
		const Eigen::Index na = a.size(), nb = b.size();
		CVec c = CVec::Zero(na + nb - 1);
		for (Eigen::Index l = -(nb - 1); l <= na - 1; ++l) {
			cplx acc = 0;
			for (Eigen::Index n = 0; n < nb; ++n)
				if (n + l >= 0 && n + l < na)
					acc += a[n + l] * std::conj(b[n]);
			c[l + nb - 1] = acc;
		}
		return c;
	}

	double error_db(const CVec &ref, const CVec &x)
	{
		return power_to_db((ref - x).squaredNorm() / ref.squaredNorm());
	}
} // namespace

TEST_CASE("signals validate their sample rate")
{
	CHECK_THROWS_AS(BasebandSignal(CVec::Zero(3), 0.0), ParameterError);
	CHECK_THROWS_AS(PassbandSignal(RVec::Zero(3), -1.0), ParameterError);
	BasebandSignal e(1000.0);
	CHECK(e.empty());
	CHECK(e.mean_power() == 0.0);
}

TEST_CASE("duc of a constant gives a unit cosine at the carrier")
{
	BasebandSignal bb(CVec::Constant(400, cplx(1, 0)), 10e3);
	auto pb = digital_up_convert(bb, 100e3, 1e6);
	REQUIRE(pb.sample_rate == 1e6);
	REQUIRE(pb.size() == 40000);
	double worst = 0;
	for (Eigen::Index n = 5000; n < 35000; ++n)
		worst = std::max(worst, std::abs(pb.samples[n] - std::cos(2 * pi * 1e5 * double(n) / 1e6)));
	CHECK(worst < 1e-3);
}

TEST_CASE("duc places a +5 kHz tone at 105 kHz")
{
	const double fs_bb = 20e3, fs = 1e6;
	BasebandSignal bb(tone(5e3, fs_bb, 2000), fs_bb);
	auto pb = digital_up_convert(bb, 100e3, fs);
	const double bin = fs / double(pb.size());
	CHECK(std::abs(peak_frequency_real(pb.samples, fs) - 105e3) <= bin);
}

TEST_CASE("duc rejects Nyquist violations and passes empty input")
{
	BasebandSignal bb(CVec::Ones(10), 50e3);
	CHECK_THROWS_AS(digital_up_convert(bb, 100e3, 200e3), ParameterError);
	CHECK_THROWS_AS(digital_up_convert(bb, 20e3, 1e6), ParameterError);
	CHECK(digital_up_convert(BasebandSignal(50e3), 100e3, 1e6).empty());
}

TEST_CASE("duc image energy is at least 60 dB below the passband")
{
	const double fs_bb = 50e3, fs = 500e3, fc = 100e3;
	// Hann-tapered noise so the burst edges do not splatter on their own
	CVec x = bandlimited(4096, 40e3, fs_bb, 7);
	for (Eigen::Index i = 0; i < x.size(); ++i)
		x[i] *= std::pow(std::sin(pi * double(i) / double(x.size())), 2);
	BasebandSignal bb(x, fs_bb);
	auto pb = digital_up_convert(bb, fc, fs);
	const Eigen::Index n = pb.size();
	CVec s = fft<double>(pb.samples.cast<cplx>());
	double in_band = 0, image = 0;
	for (Eigen::Index k = 0; k < n / 2; ++k) {
		const double f = double(k) * fs / double(n);
		const double p = std::norm(s[k]);
		if (std::abs(f - fc) < 20e3)
			in_band += p;
		else if (std::abs(f - fc) > 30e3)
			image += p;
	}
	CHECK(power_to_db(image / in_band) < -60.0);
}

TEST_CASE("duc output carries half the baseband energy")
{
	const double fs_bb = 25e3, fs = 1e6;
	BasebandSignal bb(bandlimited(4000, 10e3, fs_bb, 11), fs_bb);
	auto pb = digital_up_convert(bb, 100e3, fs);
	const double ratio = pb.energy() / bb.energy();
	CHECK(ratio == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("ddc of a carrier gives one half")
{
	const double fs = 1e6;
	RVec x(100000);
	for (Eigen::Index n = 0; n < x.size(); ++n)
		x[n] = std::cos(2 * pi * 1e5 * double(n) / fs);
	auto bb = digital_down_convert(PassbandSignal(x, fs), 100e3, 50e3);
	REQUIRE(bb.size() == 5000);
	for (Eigen::Index i = 500; i < 4500; i += 97) {
		CHECK(bb.samples[i].real() == doctest::Approx(0.5).epsilon(0.01));
		CHECK(std::abs(bb.samples[i].imag()) < 5e-3);
	}
}

TEST_CASE("ddc rejects an out-of-band tone by 60 dB")
{
	const double fs = 1e6;
	RVec x(100000);
	for (Eigen::Index n = 0; n < x.size(); ++n)
		x[n] = std::cos(2 * pi * 3e5 * double(n) / fs);
	auto bb = digital_down_convert(PassbandSignal(x, fs), 100e3, 50e3);
	const double p = bb.samples.segment(500, 4000).squaredNorm() / 4000;
	CHECK(power_to_db(p / 0.5) < -60.0);
}

TEST_CASE("ddc(duc(x)) reconstructs a 10 kHz burst")
{
	const double fs_bb = 25e3, fs = 1e6;
	CVec x = bandlimited(5000, 10e3, fs_bb, 3);
	auto pb = digital_up_convert(BasebandSignal(x, fs_bb), 100e3, fs);
	auto y = digital_down_convert(pb, 100e3, fs_bb);
	REQUIRE(y.size() == x.size());
	const Eigen::Index guard = 500;
	CVec ref = x.segment(guard, x.size() - 2 * guard);
	CVec got = 2.0 * y.samples.segment(guard, x.size() - 2 * guard);
	CHECK(error_db(ref, got) < -40.0);
}

TEST_CASE("ddc parameter checks")
{
	PassbandSignal pb(RVec::Zero(100), 1e6);
	CHECK_THROWS_AS(digital_down_convert(pb, 100e3, 2e6), ParameterError);
	CHECK_THROWS_AS(digital_down_convert(pb, 600e3, 50e3), ParameterError);
	CHECK_THROWS_AS(digital_down_convert(pb, 0.0, 50e3), ParameterError);
}

TEST_CASE("resample by one is the identity")
{
	BasebandSignal x(bandlimited(2000, 20e3, 50e3, 5), 50e3);
	auto y = resample(x, 1.0);
	REQUIRE(y.size() == x.size());
	CHECK(error_db(x.samples, y.samples) < -50.0);
}

TEST_CASE("resample moves a 1 kHz tone to 1.001 kHz")
{
	const double fs = 8e3;
	const Eigen::Index n = 1 << 17;
	BasebandSignal x(tone(1e3, fs, n), fs);
	auto y = resample(x, 1.001);
	CHECK(double(y.size()) == doctest::Approx(double(n) / 1.001).epsilon(1e-4));
	const Eigen::Index nfft = 1 << 20; // zero-padded: bin 7.6 mHz
	const double f = peak_frequency(y.samples, fs, nfft);
	CHECK(std::abs(f - 1001.0) < fs / double(y.size()));
	CHECK(std::abs(f - 1001.0) < std::abs(f - 1000.0));
}

TEST_CASE("resample round trip")
{
	BasebandSignal x(bandlimited(4000, 20e3, 50e3, 9), 50e3);
	for (double a : {0.95, 1.003, 1.07}) {
		auto y = resample(resample(x, a), 1.0 / a);
		const Eigen::Index m = std::min(x.size(), y.size()) - 400;
		CHECK(error_db(x.samples.segment(200, m - 200), y.samples.segment(200, m - 200)) < -40.0);
	}
}

TEST_CASE("resample is linear in a scalar gain")
{
	BasebandSignal x(random_cvec(500, 1), 1e3);
	const cplx alpha(0.3, -2.0);
	auto a = resample(BasebandSignal(alpha * x.samples, 1e3), 1.02);
	auto b = resample(x, 1.02);
	CHECK((a.samples - alpha * b.samples).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("resample range contract")
{
	BasebandSignal x(CVec::Ones(10), 1e3);
	CHECK_THROWS_AS(resample(x, 1.2), ParameterError);
	CHECK_THROWS_AS(resample(x, 0.85), ParameterError);
	CHECK_THROWS_AS(resample(BasebandSignal(1e3), 1.0), ParameterError);
}

TEST_CASE("degree-3 m-sequence")
{
	MSequenceSpec s{3, 0b1011, 0b001};
	Bits b = generate_msequence(s);
	REQUIRE(b.size() == 7);
	CHECK(std::count(b.begin(), b.end(), 1) == 4);
	s.seed = 0;
	CHECK_THROWS_AS(generate_msequence(s), ParameterError);
	s.seed = 1;
	s.taps = 0b1001; // x^3 + 1 is reducible
	CHECK_THROWS_AS(generate_msequence(s), ParameterError);
}

TEST_CASE("m-sequences have two-valued circular autocorrelation")
{
	for (int d = 2; d <= 12; ++d) {
		CAPTURE(d);
		for (std::uint32_t seed : {1u, 3u}) {
			if (seed >= (1u << d))
				continue;
			Bits b = generate_msequence({d, default_primitive_taps(d), seed});
			const int n = (1 << d) - 1;
			REQUIRE(int(b.size()) == n);
			CHECK(std::count(b.begin(), b.end(), 1) == (n + 1) / 2);
			CVec c = bits_to_chips(b);
			for (int l = 0; l < n; ++l) {
				double acc = 0;
				for (int i = 0; i < n; ++i)
					acc += c[i].real() * c[(i + l) % n].real();
				CHECK(acc == (l == 0 ? n : -1));
			}
		}
	}
}

TEST_CASE("default degree-9 polynomial and table validation")
{
	CHECK(default_primitive_taps(9) == 0b1000100001u);
	CHECK(MSequenceSpec::standard(9).degree == 9);
	CHECK(generate_msequence(MSequenceSpec::standard(9)).size() == 511);
	for (int d = 2; d <= 16; ++d)
		CHECK(is_primitive(default_primitive_taps(d), d));
}

TEST_CASE("lfm basics")
{
	auto dc = generate_lfm({0, 0, 1e-3, 0.7}, 10e3);
	REQUIRE(dc.size() == 10);
	for (auto v : dc.samples)
		CHECK(std::abs(v - cplx(0.7, 0)) < 1e-12);
	CHECK_THROWS_AS(generate_lfm({-60e3, 60e3, 1e-3, 1}, 100e3), ParameterError);
	CHECK_THROWS_AS(generate_lfm({0, 1e3, 0, 1}, 100e3), ParameterError);
}

TEST_CASE("lfm spectrogram ridge has the sweep slope")
{
	const double fs = 250e3;
	auto x = generate_lfm({-50e3, 50e3, 10e-3, 1.0}, fs);
	REQUIRE(x.size() == 2500);
	const Eigen::Index win = 128, hop = 64, nfft = 4096;
	std::vector<double> t, f;
	for (Eigen::Index s = 0; s + win <= x.size(); s += hop) {
		CVec seg = x.samples.segment(s, win);
		t.push_back((double(s) + win / 2.0) / fs);
		f.push_back(peak_frequency(seg, fs, nfft));
	}
	const double n = double(t.size());
	double st = 0, sf = 0, stt = 0, stf = 0;
	for (std::size_t i = 0; i < t.size(); ++i) {
		st += t[i];
		sf += f[i];
		stt += t[i] * t[i];
		stf += t[i] * f[i];
	}
	const double slope = (n * stf - st * sf) / (n * stt - st * st);
	CHECK(slope == doctest::Approx(10e6).epsilon(0.01));
	for (auto v : x.samples)
		CHECK(std::abs(v) == doctest::Approx(1.0));
}

TEST_CASE("lfm pulse compression")
{
	const double fs = 250e3;
	auto x = generate_lfm({-50e3, 50e3, 10e-3, 1.0}, fs);
	CVec c = cross_correlate(x, x);
	Eigen::Index k;
	const double peak = c.cwiseAbs().maxCoeff(&k);
	CHECK(k == x.size() - 1);
	// effective compressed width sum|c|^2 / peak^2 ~ fs / B samples
	const double width = c.squaredNorm() / (peak * peak);
	const double ratio = double(x.size()) / width;
	CHECK(ratio == doctest::Approx(1000.0).epsilon(0.1));
}

TEST_CASE("cross_correlate basics and symmetry")
{
	CVec d = CVec::Zero(5);
	d[0] = 1;
	CVec imp = CVec::Zero(1);
	imp[0] = 1;
	CVec c = cross_correlate(imp, imp);
	REQUIRE(c.size() == 1);
	CHECK(c[0] == cplx(1, 0));

	CVec b = random_cvec(64, 2);
	CVec a = CVec::Zero(64 + 17);
	a.segment(17, 64) = b;
	CVec ab = cross_correlate(a, b);
	Eigen::Index k;
	ab.cwiseAbs().maxCoeff(&k);
	CHECK(k - (b.size() - 1) == 17);

	CVec ba = cross_correlate(b, a);
	CHECK((ab - ba.reverse().conjugate()).cwiseAbs().maxCoeff() < 1e-9);
	CHECK_THROWS_AS(cross_correlate(BasebandSignal(a, 1.0), BasebandSignal(b, 2.0)), ParameterError);
}

TEST_CASE("cross_correlate matches the direct sum")
{
	for (auto [na, nb] : {std::pair{10, 7}, {1024, 1024}, {300, 700}, {1, 50}}) {
		CVec a = random_cvec(na, 100 + na), b = random_cvec(nb, 200 + nb);
		CVec fast = cross_correlate(a, b), ref = direct_xcorr(a, b);
		REQUIRE(fast.size() == na + nb - 1);
		CHECK((fast - ref).norm() / ref.norm() < 1e-9);
	}
}

TEST_CASE("raw iq file round trip with sidecar")
{
	const auto dir = std::filesystem::temp_directory_path() / "uam_iq_test";
	std::filesystem::create_directories(dir);
	const auto path = dir / "cap.iq";
	CVec x = random_cvec(333, 4);
	write_iq(path, BasebandSignal(x, 48e3), 100e3);
	CHECK(std::filesystem::file_size(path) == 333 * 8);
	CHECK(std::filesystem::exists(dir / "cap.json"));
	auto rec = read_iq(path);
	CHECK(rec.meta.sample_rate == 48e3);
	CHECK(rec.meta.center_frequency == 100e3);
	CHECK(rec.meta.domain == "baseband");
	REQUIRE(rec.signal.size() == 333);
	CHECK((rec.signal.samples - x.cast<std::complex<float>>().cast<cplx>()).cwiseAbs().maxCoeff() == 0.0);
	std::filesystem::remove_all(dir);
}
