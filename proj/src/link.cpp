#include "uam/link.hpp"

#include <algorithm>
#include <array>
#include <iostream>
#include <limits>
#include <queue>

namespace uam
{
	namespace
	{
		std::array<std::uint32_t, 256> make_crc_table()
		{
			std::array<std::uint32_t, 256> t{};
			for (std::uint32_t i = 0; i < 256; ++i) {
				std::uint32_t c = i;
				for (int k = 0; k < 8; ++k)
					c = c & 1 ? 0xEDB88320u ^ (c >> 1) : c >> 1;
				t[i] = c;
			}
			return t;
		}

		// slack around a CSS reception window, seconds
		constexpr double kWindowMargin = 5e-3;
	} // namespace

	std::uint32_t crc32(const std::uint8_t *data, std::size_t n)
	{
		static const auto table = make_crc_table();
		std::uint32_t c = 0xFFFFFFFFu;
		for (std::size_t i = 0; i < n; ++i)
			c = table[(c ^ data[i]) & 0xFF] ^ (c >> 8);
		return c ^ 0xFFFFFFFFu;
	}

	const char *to_string(FrameType t)
	{
		switch (t) {
		case FrameType::Data:
			return "DATA";
		case FrameType::Ack:
			return "ACK";
		case FrameType::Nack:
			return "NACK";
		}
		return "?";
	}

	Bytes mac_encode(const MacFrame &f)
	{
		if (f.payload.size() > kMaxPayload)
			throw ParameterError("mac_encode: payload exceeds " + std::to_string(kMaxPayload) + " bytes");
		if (f.type != FrameType::Data && !f.payload.empty())
			throw ParameterError("mac_encode: ACK/NACK frames carry no payload");
		const std::size_t len = f.payload.size();
		Bytes out(kMacOverhead + len);
		out[0] = f.src;
		out[1] = f.dst;
		out[2] = std::uint8_t(f.type);
		out[3] = f.seq;
		out[4] = std::uint8_t(len & 0xFF);
		out[5] = std::uint8_t(len >> 8);
		std::copy(f.payload.begin(), f.payload.end(), out.begin() + kMacHeader);
		const std::uint32_t c = crc32(out.data(), kMacHeader + len);
		for (std::size_t i = 0; i < 4; ++i)
			out[kMacHeader + len + i] = std::uint8_t(c >> (8 * i));
		return out;
	}

	MacDecoded mac_decode(const Bytes &bytes)
	{
		MacDecoded r;
		r.raw = bytes;
		if (bytes.size() < kMacOverhead)
			return r;
		const std::size_t len = bytes[4] | std::size_t(bytes[5]) << 8;
		if (len > kMaxPayload || bytes.size() < kMacOverhead + len)
			return r;
		const std::size_t body = kMacHeader + len;
		std::uint32_t c = 0;
		for (int i = 0; i < 4; ++i)
			c |= std::uint32_t(bytes[body + std::size_t(i)]) << (8 * i);
		if (c != crc32(bytes.data(), body) || bytes[2] > std::uint8_t(FrameType::Nack))
			return r;
		r.raw.resize(body + 4);
		MacFrame f;
		f.src = bytes[0];
		f.dst = bytes[1];
		f.type = FrameType(bytes[2]);
		f.seq = bytes[3];
		f.payload.assign(bytes.begin() + kMacHeader, bytes.begin() + std::ptrdiff_t(body));
		r.frame = std::move(f);
		return r;
	}

	std::pair<MacState, std::vector<MacAction>> mac_scheduler_step(MacState s, const MacEvents &ev)
	{
		using Kind = MacAction::Kind;
		std::vector<MacAction> out;

		auto done = [&] {
			s.outstanding.reset();
			s.phase = MacState::Phase::Idle;
			s.retries = 0;
		};
		auto retry = [&] {
			if (s.max_retries >= 0 && s.retries >= s.max_retries) {
				out.push_back({Kind::CancelTimer});
				out.push_back({Kind::GiveUp, *s.outstanding});
				done();
				return;
			}
			++s.retries;
			out.push_back({Kind::Transmit, *s.outstanding, true});
			out.push_back({Kind::ArmTimer});
		};

		if (ev.incoming) {
			const MacDecoded &in = *ev.incoming;
			if (!in.ok()) {
				// a damaged frame while waiting is most likely our ACK
				if (s.phase == MacState::Phase::AwaitingAck)
					retry();
				else
					out.push_back({Kind::Transmit, MacFrame{s.id, s.peer, FrameType::Nack, s.expected_seq, {}}});
			} else if (in.frame->dst == s.id) {
				const MacFrame &f = *in.frame;
				switch (f.type) {
				case FrameType::Data:
					if (f.seq == s.expected_seq) {
						out.push_back({Kind::Deliver, f});
						++s.expected_seq;
					}
					// duplicates are acknowledged again so the sender can move on
					out.push_back({Kind::Transmit, MacFrame{s.id, f.src, FrameType::Ack, f.seq, {}}});
					break;
				case FrameType::Ack:
					if (s.phase == MacState::Phase::AwaitingAck && f.seq == s.outstanding->seq) {
						out.push_back({Kind::CancelTimer});
						out.push_back({Kind::Confirm, *s.outstanding});
						done();
					}
					break;
				case FrameType::Nack:
					if (s.phase == MacState::Phase::AwaitingAck)
						retry();
					break;
				}
			}
		}

		if (ev.timer_expired && s.phase == MacState::Phase::AwaitingAck)
			retry();

		if (s.phase == MacState::Phase::Idle && ev.pending) {
			s.outstanding = MacFrame{s.id, s.peer, FrameType::Data, s.next_seq++, *ev.pending};
			s.phase = MacState::Phase::AwaitingAck;
			s.retries = 0;
			out.push_back({Kind::Accept});
			out.push_back({Kind::Transmit, *s.outstanding, false});
			out.push_back({Kind::ArmTimer});
		}
		return {std::move(s), std::move(out)};
	}

	LayerStack::LayerStack()
	{
		auto relay = [](BlockingPipe<Bytes> &in, BlockingPipe<Bytes> &out) {
			while (auto m = in.pop())
				out.push(std::move(*m));
			out.close();
		};
		threads_.emplace_back(relay, std::ref(pipes_[0]), std::ref(pipes_[1])); // transport, down
		threads_.emplace_back(relay, std::ref(pipes_[1]), std::ref(pipes_[2])); // network, down
		threads_.emplace_back(relay, std::ref(pipes_[3]), std::ref(pipes_[4])); // network, up
		threads_.emplace_back(relay, std::ref(pipes_[4]), std::ref(pipes_[5])); // transport, up
	}

	LayerStack::~LayerStack()
	{
		pipes_[0].close();
		pipes_[3].close();
		for (std::thread &t : threads_)
			t.join();
	}

	IdealLink::IdealLink(double loss, std::uint64_t seed, CssConfig forward, CssConfig feedback, double delay, double turnaround)
	    : loss_(loss), rng_(seed), fwd_(forward), fb_(feedback), delay_(delay), turnaround_(turnaround)
	{
		if (!(loss >= 0 && loss < 1))
			throw ParameterError("IdealLink: loss must be in [0, 1)");
		if (delay < 0 || turnaround < 0)
			throw ParameterError("IdealLink: negative delay or turnaround");
		fwd_.validate();
		fb_.validate();
	}

	double IdealLink::airtime(FrameType type, std::size_t frame_bytes) const
	{
		return (type == FrameType::Data ? fwd_ : fb_).airtime(8 * frame_bytes);
	}

	LinkTransmission IdealLink::transmit(int, double start, const Bytes &frame, FrameType type)
	{
		const bool lost = type == FrameType::Data && loss_ > 0 && rng_.uniform() < loss_;
		sent_.push_back(lost ? std::nullopt : std::optional<Bytes>(frame));
		const double end = start + airtime(type, frame.size());
		return {sent_.size() - 1, end, end + delay_};
	}

	std::optional<MacDecoded> IdealLink::receive(std::size_t id)
	{
		const auto &f = sent_.at(id);
		if (!f)
			return std::nullopt;
		return mac_decode(*f);
	}

	WaveformLink::WaveformLink(ChannelModel model, CssConfig forward, CssConfig feedback)
	    : medium_(std::move(model), forward.f_center, forward.rate()), fwd_(forward), fb_(feedback)
	{
		if (fb_.sample_rate == 0)
			fb_.sample_rate = fwd_.rate();
		if (fb_.rate() != fwd_.rate() || fb_.f_center != fwd_.f_center)
			throw ParameterError("WaveformLink: feedback band must share the forward rate and centre");
		fwd_.validate();
		fb_.validate();
		a_ = medium_.add_endpoint("A");
		b_ = medium_.add_endpoint("B");
	}

	double WaveformLink::airtime(FrameType type, std::size_t frame_bytes) const
	{
		return config(type).airtime(8 * frame_bytes);
	}

	LinkTransmission WaveformLink::transmit(int from, double start, const Bytes &frame, FrameType type)
	{
		const BasebandSignal wave = css_modulate(bytes_to_bits(frame), config(type));
		medium_.transmit(endpoint(from), start, wave, to_string(type));
		const double end = start + wave.duration();
		sent_.push_back({from, start, end, type});
		const double ready = end + medium_.model().max_delay() * medium_.model().doppler_scale + kWindowMargin;
		return {sent_.size() - 1, end, ready};
	}

	std::optional<MacDecoded> WaveformLink::receive(std::size_t id)
	{
		const Sent s = sent_.at(id);
		const ChannelModel &m = medium_.model();
		const double t0 = std::max(0.0, s.start + m.propagation_delay() - kWindowMargin);
		const double t1 = s.end + m.max_delay() * m.doppler_scale + kWindowMargin;
		// the k-th frame in each direction gets the same noise in every run of a sweep
		const int to = 1 - s.from;
		const std::uint64_t key = std::uint64_t(to) << 48 | received_[std::size_t(to)]++;
		const BasebandSignal rx = medium_.receive(endpoint(to), t0, t1, key);
		// nothing that starts after this one can still need older arrivals
		if (!keep_history_)
			medium_.retire(t0 - 1.0);
		const auto search = static_cast<Eigen::Index>(std::ceil((2 * kWindowMargin + m.max_delay() * m.doppler_scale) * rx.sample_rate));
		const CssResult r = css_demodulate(rx, config(s.type), 0, 0, search);
		if (!r.detected)
			return std::nullopt;
		return mac_decode(bits_to_bytes(r.bits));
	}

	void ArqConfig::validate() const
	{
		if (timeout < 0)
			throw ParameterError("ArqConfig: negative timeout");
		if (packet_size == 0 || packet_size > kMaxPayload)
			throw ParameterError("ArqConfig: packet_size must be in 1.." + std::to_string(kMaxPayload));
		if (!(max_elapsed > 0))
			throw ParameterError("ArqConfig: max_elapsed must be positive");
	}

	double ArqConfig::default_timeout(const FrameLink &link) const
	{
		return 2 * (link.propagation_delay() + link.airtime(FrameType::Data, packet_size + kMacOverhead) +
		            link.airtime(FrameType::Ack, kMacOverhead) + link.turnaround());
	}

	std::string ArqConfig::check(const FrameLink &link) const
	{
		// measured from the end of the DATA frame: the ACK needs two crossings, a turnaround and its own air time
		const double need = 2 * link.propagation_delay() + link.turnaround() + link.airtime(FrameType::Ack, kMacOverhead);
		const double t = effective_timeout(link);
		if (t > need)
			return {};
		return "ARQ timeout " + std::to_string(t) + " s does not cover the " + std::to_string(need) + " s round trip";
	}

	ArqTransfer arq_send_file(const Bytes &data, const ArqConfig &cfg, FrameLink &link)
	{
		cfg.validate();
		if (const std::string w = cfg.check(link); !w.empty())
			std::cerr << "warning: " << w << '\n';
		const double timeout = cfg.effective_timeout(link);

		struct Node
		{
			MacState mac;
			LayerStack stack;
			double busy_until = 0.0;
			std::uint64_t timer = 0;
			std::optional<Bytes> staged;
			bool drained = false;
		};
		Node nodes[2];
		nodes[0].mac.id = 1;
		nodes[0].mac.peer = 2;
		nodes[1].mac.id = 2;
		nodes[1].mac.peer = 1;
		for (Node &n : nodes)
			n.mac.max_retries = cfg.max_retries;

		for (std::size_t at = 0; at < data.size(); at += cfg.packet_size) {
			const std::size_t len = std::min(cfg.packet_size, data.size() - at);
			nodes[0].stack.app_down().push(Bytes(data.begin() + std::ptrdiff_t(at), data.begin() + std::ptrdiff_t(at + len)));
		}
		nodes[0].stack.app_down().close();
		nodes[1].stack.app_down().close();

		struct Event
		{
			double time;
			std::uint64_t order;
			int node;
			bool timer;
			std::uint64_t ref; // transmission id, or timer generation
		};
		auto later = [](const Event &a, const Event &b) { return a.time != b.time ? a.time > b.time : a.order > b.order; };
		std::priority_queue<Event, std::vector<Event>, decltype(later)> queue(later);
		std::uint64_t order = 0;

		ArqTransfer result;
		LinkStats &st = result.stats;
		bool failed = false;
		std::string why;

		auto pending = [&](Node &n) -> const Bytes * {
			if (!n.staged && !n.drained) {
				if (auto m = n.stack.mac_down().pop())
					n.staged = std::move(*m);
				else
					n.drained = true;
			}
			return n.staged ? &*n.staged : nullptr;
		};

		auto step = [&](int i, MacEvents ev, double now) {
			Node &n = nodes[i];
			ev.pending = pending(n);
			auto [next, actions] = mac_scheduler_step(n.mac, ev);
			n.mac = std::move(next);
			for (const MacAction &a : actions) {
				switch (a.kind) {
				case MacAction::Kind::Deliver:
					n.stack.mac_up().push(a.frame.payload);
					break;
				case MacAction::Kind::Transmit: {
					const double start = std::max(now, n.busy_until);
					const LinkTransmission tx = link.transmit(i, start, mac_encode(a.frame), a.frame.type);
					n.busy_until = tx.end;
					queue.push({tx.ready, order++, 1 - i, false, tx.id});
					if (i == 0 && a.frame.type == FrameType::Data) {
						++st.packets_sent;
						st.retransmissions += a.retransmission;
					}
					break;
				}
				case MacAction::Kind::Accept:
					n.staged.reset();
					st.packets += i == 0;
					break;
				case MacAction::Kind::Confirm:
					st.elapsed = now;
					break;
				case MacAction::Kind::ArmTimer:
					queue.push({n.busy_until + timeout, order++, i, true, ++n.timer});
					break;
				case MacAction::Kind::CancelTimer:
					++n.timer;
					break;
				case MacAction::Kind::GiveUp:
					failed = true;
					why = "retry budget exhausted on seq " + std::to_string(a.frame.seq);
					break;
				}
			}
		};

		step(0, {}, 0.0);
		while (!queue.empty() && !failed) {
			const Event e = queue.top();
			queue.pop();
			if (e.time > cfg.max_elapsed) {
				failed = true;
				why = "virtual time budget exceeded";
				break;
			}
			if (e.timer) {
				if (e.ref != nodes[e.node].timer || nodes[e.node].mac.phase != MacState::Phase::AwaitingAck)
					continue;
				st.timeouts += e.node == 0;
				step(e.node, {std::nullopt, nullptr, true}, e.time);
				continue;
			}
			std::optional<MacDecoded> in = link.receive(e.ref);
			if (!in)
				continue;
			if (e.node == 0 && in->ok() && in->frame->dst == nodes[0].mac.id) {
				st.acks += in->frame->type == FrameType::Ack;
				st.nacks += in->frame->type == FrameType::Nack;
			}
			step(e.node, {std::move(in), nullptr, false}, e.time);
		}

		const bool complete = !failed && nodes[0].drained && !nodes[0].staged && nodes[0].mac.phase == MacState::Phase::Idle;
		for (Node &n : nodes)
			n.stack.mac_up().close();
		while (auto m = nodes[1].stack.app_up().pop())
			result.received.insert(result.received.end(), m->begin(), m->end());
		st.delivered_bytes = result.received.size();
		st.goodput = st.elapsed > 0 ? 8.0 * double(st.delivered_bytes) / st.elapsed : 0.0;
		if (!complete)
			throw DeliveryFailure(why.empty() ? "transfer stalled" : why, std::move(result));
		return result;
	}
} // namespace uam
