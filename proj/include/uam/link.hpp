#pragma once

#include "uam/channel.hpp"
#include "uam/css.hpp"
#include "uam/rng.hpp"
#include "uam/signal.hpp"

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>
#include <utility>
#include <vector>

namespace uam
{
	/// CRC-32, IEEE 802.3 polynomial, reflected, initial value and final xor all ones.
	std::uint32_t crc32(const std::uint8_t *data, std::size_t n);
	inline std::uint32_t crc32(const Bytes &b) { return crc32(b.data(), b.size()); }

	enum class FrameType : std::uint8_t
	{
		Data = 0,
		Ack = 1,
		Nack = 2
	};

	const char *to_string(FrameType t);

	/// Wire layout: src, dst, type, seq, payload length (LE16), payload, CRC-32 (LE32)
	/// over everything before it.
	struct MacFrame
	{
		std::uint8_t src = 0;
		std::uint8_t dst = 0;
		FrameType type = FrameType::Data;
		std::uint8_t seq = 0;
		Bytes payload;

		bool operator==(const MacFrame &) const = default;
	};

	inline constexpr std::size_t kMaxPayload = 1024;
	inline constexpr std::size_t kMacHeader = 6;
	inline constexpr std::size_t kMacOverhead = kMacHeader + 4;

	Bytes mac_encode(const MacFrame &frame);

	/// Either a valid frame or an integrity failure carrying the raw bytes.
	struct MacDecoded
	{
		std::optional<MacFrame> frame;
		Bytes raw;

		bool ok() const { return frame.has_value(); }
	};

	/// Decodes one frame from the front of `bytes`; trailing bytes beyond the
	/// declared length are ignored.
	MacDecoded mac_decode(const Bytes &bytes);

	/// Per-endpoint MAC state. One endpoint can send and receive at once; the
	/// phase tracks only its own outstanding DATA frame.
	struct MacState
	{
		enum class Phase
		{
			Idle,
			AwaitingAck
		};

		Phase phase = Phase::Idle;
		std::uint8_t id = 0;
		std::uint8_t peer = 0;
		std::uint8_t next_seq = 0;     ///< seq of the next new DATA frame
		std::uint8_t expected_seq = 0; ///< next in-order seq from the peer
		std::optional<MacFrame> outstanding;
		int retries = 0;
		int max_retries = -1; ///< negative means unbounded
	};

	struct MacEvents
	{
		std::optional<MacDecoded> incoming;
		const Bytes *pending = nullptr; ///< next upper-layer payload, if any
		bool timer_expired = false;
	};

	struct MacAction
	{
		enum class Kind
		{
			Deliver,     ///< frame.payload goes up the stack
			Transmit,    ///< put frame on the air
			Accept,      ///< the pending payload was taken
			Confirm,     ///< the outstanding frame was acknowledged
			ArmTimer,    ///< (re)start the retransmission timer after the last Transmit
			CancelTimer,
			GiveUp       ///< retry budget exhausted
		};

		Kind kind;
		MacFrame frame{};
		bool retransmission = false;
	};

	/// Deterministic FSM step. The incoming frame is handled before a pending
	/// transmission, and new DATA is only sent from Idle (stop and wait).
	std::pair<MacState, std::vector<MacAction>> mac_scheduler_step(MacState state, const MacEvents &events);

	/// Unbounded blocking FIFO. pop() waits for an element and returns
	/// nothing once the pipe is closed and drained.
	template <typename T>
	class BlockingPipe
	{
	public:
		void push(T v)
		{
			{
				std::lock_guard lock(m_);
				if (closed_)
					throw std::logic_error("push on a closed pipe");
				q_.push_back(std::move(v));
			}
			cv_.notify_one();
		}

		std::optional<T> pop()
		{
			std::unique_lock lock(m_);
			cv_.wait(lock, [&] { return !q_.empty() || closed_; });
			if (q_.empty())
				return std::nullopt;
			T v = std::move(q_.front());
			q_.pop_front();
			return v;
		}

		void close()
		{
			{
				std::lock_guard lock(m_);
				closed_ = true;
			}
			cv_.notify_all();
		}

	private:
		std::mutex m_;
		std::condition_variable cv_;
		std::deque<T> q_;
		bool closed_ = false;
	};

	/// Application / transport / network / MAC chain joined by blocking pipes,
	/// one per direction per boundary. Transport and network are pass-through
	/// and each runs on its own thread.
	class LayerStack
	{
	public:
		LayerStack();
		~LayerStack();
		LayerStack(const LayerStack &) = delete;
		LayerStack &operator=(const LayerStack &) = delete;

		BlockingPipe<Bytes> &app_down() { return pipes_[0]; }
		BlockingPipe<Bytes> &mac_down() { return pipes_[2]; }
		BlockingPipe<Bytes> &mac_up() { return pipes_[3]; }
		BlockingPipe<Bytes> &app_up() { return pipes_[5]; }

	private:
		// down: app -> transport -> network -> mac, up: mac -> network -> transport -> app
		BlockingPipe<Bytes> pipes_[6];
		std::vector<std::thread> threads_;
	};

	struct LinkTransmission
	{
		std::size_t id;
		double end;   ///< transmitter finishes
		double ready; ///< the peer can decide on it
	};

	/// Frame carrier between endpoint 0 (file sender) and endpoint 1.
	class FrameLink
	{
	public:
		virtual ~FrameLink() = default;

		virtual double airtime(FrameType type, std::size_t frame_bytes) const = 0;
		virtual double propagation_delay() const = 0;
		virtual double turnaround() const = 0;
		virtual LinkTransmission transmit(int from, double start, const Bytes &frame, FrameType type) = 0;
		/// What the other endpoint makes of transmission `id`: nothing when no
		/// frame was detected.
		virtual std::optional<MacDecoded> receive(std::size_t id) = 0;
	};

	/// No waveforms: CSS air times, a fixed delay, and DATA frames dropped with
	/// probability `loss` from a seeded stream. Control frames always arrive.
	class IdealLink : public FrameLink
	{
	public:
		IdealLink(double loss = 0.0, std::uint64_t seed = 1, CssConfig forward = CssConfig::forward(),
		          CssConfig feedback = CssConfig::feedback(), double delay = 0.0, double turnaround = 3e-3);

		double airtime(FrameType type, std::size_t frame_bytes) const override;
		double propagation_delay() const override { return delay_; }
		double turnaround() const override { return turnaround_; }
		LinkTransmission transmit(int from, double start, const Bytes &frame, FrameType type) override;
		std::optional<MacDecoded> receive(std::size_t id) override;

	private:
		double loss_;
		SplitMix64 rng_;
		CssConfig fwd_, fb_;
		double delay_, turnaround_;
		std::vector<std::optional<Bytes>> sent_;
	};

	/// CSS waveforms over a half-duplex medium: DATA on the forward band,
	/// ACK/NACK on the narrower feedback band. Each reception draws fresh
	/// noise keyed by its ordinal in that direction, so two transfers with
	/// the same channel seed see the same noise on their k-th frames.
	/// Extra endpoints added to medium() before the transfer hear everything.
	class WaveformLink : public FrameLink
	{
	public:
		explicit WaveformLink(ChannelModel model, CssConfig forward = CssConfig::forward(),
		                      CssConfig feedback = CssConfig::feedback());

		double airtime(FrameType type, std::size_t frame_bytes) const override;
		double propagation_delay() const override { return medium_.model().propagation_delay(); }
		double turnaround() const override { return medium_.model().turnaround; }
		LinkTransmission transmit(int from, double start, const Bytes &frame, FrameType type) override;
		std::optional<MacDecoded> receive(std::size_t id) override;

		HalfDuplexMedium &medium() { return medium_; }
		int endpoint(int node) const { return node == 0 ? a_ : b_; }
		/// Keep every arrival on the medium for later listening; by default
		/// arrivals no later reception can need are freed as the transfer runs.
		void keep_history(bool keep) { keep_history_ = keep; }

	private:
		struct Sent
		{
			int from;
			double start, end;
			FrameType type;
		};

		const CssConfig &config(FrameType type) const { return type == FrameType::Data ? fwd_ : fb_; }

		HalfDuplexMedium medium_;
		CssConfig fwd_, fb_;
		int a_, b_;
		std::vector<Sent> sent_;
		std::uint64_t received_[2] = {0, 0};
		bool keep_history_ = false;
	};

	struct ArqConfig
	{
		double timeout = 0.0;      ///< seconds after the DATA frame ends; 0 derives default_timeout
		int max_retries = -1;      ///< negative means unbounded
		std::size_t packet_size = 64;
		double max_elapsed = 1e6;  ///< virtual-time budget, seconds

		void validate() const;
		/// 2 x (propagation + DATA air time + ACK air time + turnaround).
		double default_timeout(const FrameLink &link) const;
		double effective_timeout(const FrameLink &link) const { return timeout > 0 ? timeout : default_timeout(link); }
		/// Empty when the timeout covers a round trip, otherwise a warning.
		std::string check(const FrameLink &link) const;
	};

	struct LinkStats
	{
		std::size_t packets = 0;         ///< distinct DATA packets accepted for sending
		std::size_t packets_sent = 0;    ///< DATA transmissions, retransmissions included
		std::size_t retransmissions = 0;
		std::size_t acks = 0;            ///< received by the sender
		std::size_t nacks = 0;
		std::size_t timeouts = 0;
		std::size_t delivered_bytes = 0; ///< handed up at the receiver, in order
		double elapsed = 0.0;            ///< until the last ACK reached the sender
		double goodput = 0.0;            ///< bit/s, 8 * delivered_bytes / elapsed

		double transmissions_per_packet() const { return packets ? double(packets_sent) / double(packets) : 0.0; }
	};

	struct ArqTransfer
	{
		LinkStats stats;
		Bytes received;
	};

	class DeliveryFailure : public std::runtime_error
	{
	public:
		DeliveryFailure(const std::string &what, ArqTransfer partial) : std::runtime_error(what), partial(std::move(partial)) {}
		ArqTransfer partial;
	};

	/// Stop-and-wait transfer of `data` from endpoint 0 to endpoint 1 on a
	/// virtual clock. Both endpoints run the MAC FSM behind a LayerStack.
	ArqTransfer arq_send_file(const Bytes &data, const ArqConfig &config, FrameLink &link);
} // namespace uam
