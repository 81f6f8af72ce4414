// Simulated view-synchronous group communication: optimistic atomic broadcast,
// causal uniform reliable broadcast and FIFO point-to-point channels driven by a
// deterministic event queue. Latencies are counted in ticks.

#pragma once

#include "types.hpp"

#include <algorithm>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <queue>
#include <random>
#include <string_view>
#include <tuple>
#include <vector>

namespace lilac::gcs {

enum class MessageKind : std::uint8_t { LeaseRequest, LeaseFreed, Commit, Forward, ForwardReply, StatsGossip };
enum class DeliveryKind : std::uint8_t { OptDeliver, ToDeliver, UrDeliver, P2pDeliver };
enum class Service : std::uint8_t { Oab, Urb, P2p };

inline constexpr std::string_view to_string(MessageKind k) noexcept
{
    switch (k) {
    case MessageKind::LeaseRequest: return "LeaseRequest";
    case MessageKind::LeaseFreed: return "LeaseFreed";
    case MessageKind::Commit: return "Commit";
    case MessageKind::Forward: return "Forward";
    case MessageKind::ForwardReply: return "ForwardReply";
    case MessageKind::StatsGossip: return "StatsGossip";
    }
    return "?";
}

inline constexpr std::string_view to_string(DeliveryKind k) noexcept
{
    switch (k) {
    case DeliveryKind::OptDeliver: return "opt";
    case DeliveryKind::ToDeliver: return "to";
    case DeliveryKind::UrDeliver: return "ur";
    case DeliveryKind::P2pDeliver: return "p2p";
    }
    return "?";
}

// Which service may carry a message kind. Stats gossip rides either broadcast
// piggybacks or dedicated point-to-point messages.
inline constexpr bool carries(Service s, MessageKind k) noexcept
{
    switch (k) {
    case MessageKind::LeaseRequest: return s == Service::Oab;
    case MessageKind::LeaseFreed:
    case MessageKind::Commit: return s == Service::Urb;
    case MessageKind::Forward:
    case MessageKind::ForwardReply: return s == Service::P2p;
    case MessageKind::StatsGossip: return s == Service::P2p || s == Service::Urb;
    }
    return false;
}

struct LatencyConfig {
    Tick p2pSteps = 1;
    Tick urbSteps = 2;
    Tick oabOptSteps = 1;
    Tick oabTotalSteps = 3;
    // Probability that a node's Opt-deliver tick is drawn at random from
    // (send, TO-deliver), which permutes optimistic order relative to total order.
    double oabReorderProb = 0.0;
    // Extra uniform delay in [0, urbJitter] per URB arrival; the causal buffer
    // restores causal order.
    Tick urbJitter = 0;

    void validate() const
    {
        if (p2pSteps < 1 || urbSteps < 1 || oabOptSteps < 1 || oabTotalSteps < 1) {
            throw ConfigError("latencies must be at least one tick");
        }
        if (oabOptSteps >= oabTotalSteps) {
            throw ConfigError("optimistic delivery must precede total-order delivery");
        }
        if (oabReorderProb < 0.0 || oabReorderProb > 1.0) {
            throw ConfigError("oab reorder probability must lie in [0,1]");
        }
    }
};

template <class Payload>
struct Message {
    MessageId id = 0;
    NodeId sender = 0;
    MessageKind kind = MessageKind::Commit;
    Payload payload{};
    Tick sendTime = 0;
    // Global total-order position; only meaningful for OAB messages.
    std::uint64_t toSeq = 0;
    // Causal dependencies (per-sender delivered counts); only for URB messages.
    std::vector<std::uint64_t> deps;
};

template <class Payload>
struct Delivery {
    Tick tick = 0;
    NodeId node = 0;
    DeliveryKind kind = DeliveryKind::P2pDeliver;
    std::shared_ptr<const Message<Payload>> msg;
};

struct LogEntry {
    Tick tick = 0;
    NodeId node = 0;
    DeliveryKind kind = DeliveryKind::P2pDeliver;
    MessageId msg = 0;
    MessageKind msgKind = MessageKind::Commit;

    friend bool operator==(const LogEntry &, const LogEntry &) = default;
};

// One line per delivery: tick,node,event_kind,msg_id,msg_kind
inline void dump_log(std::ostream &os, const std::vector<LogEntry> &log)
{
    for (const auto &e : log) {
        os << e.tick << ',' << e.node << ',' << to_string(e.kind) << ',' << e.msg << ',' << to_string(e.msgKind)
           << '\n';
    }
}

template <class Payload>
class GroupComm {
public:
    using MessagePtr = std::shared_ptr<const Message<Payload>>;

    GroupComm(std::size_t nodes, LatencyConfig latency, std::uint64_t seed = 1)
        : m_nodes(nodes), m_latency(latency), m_rng(seed), m_urbDelivered(nodes, std::vector<std::uint64_t>(nodes, 0)),
          m_urbSent(nodes, 0), m_urbBuffer(nodes)
    {
        if (nodes == 0) {
            throw ConfigError("group must contain at least one node");
        }
        m_latency.validate();
    }

    std::size_t size() const noexcept { return m_nodes; }
    Tick now() const noexcept { return m_now; }
    const LatencyConfig &latency() const noexcept { return m_latency; }

    MessageId oa_broadcast(NodeId sender, MessageKind kind, Payload payload)
    {
        auto msg = make(sender, kind, std::move(payload), Service::Oab);
        msg->toSeq = ++m_toSeq;
        const Tick toTick = m_now + m_latency.oabTotalSteps;
        for (NodeId n = 0; n < m_nodes; ++n) {
            Tick optTick = m_now + m_latency.oabOptSteps;
            if (m_latency.oabReorderProb > 0.0 && m_latency.oabTotalSteps > 1) {
                std::bernoulli_distribution flip(m_latency.oabReorderProb);
                if (flip(m_rng)) {
                    std::uniform_int_distribution<Tick> d(1, m_latency.oabTotalSteps - 1);
                    optTick = m_now + d(m_rng);
                }
            }
            push(optTick, n, Pending::Opt, msg);
            push(toTick, n, Pending::To, msg);
        }
        return msg->id;
    }

    MessageId ur_broadcast(NodeId sender, MessageKind kind, Payload payload)
    {
        auto msg = make(sender, kind, std::move(payload), Service::Urb);
        msg->deps = m_urbDelivered[sender];
        msg->deps[sender] = ++m_urbSent[sender];
        for (NodeId n = 0; n < m_nodes; ++n) {
            Tick t = m_now + m_latency.urbSteps;
            if (m_latency.urbJitter > 0) {
                std::uniform_int_distribution<Tick> d(0, m_latency.urbJitter);
                t += d(m_rng);
            }
            push(t, n, Pending::UrbArrive, msg);
        }
        return msg->id;
    }

    MessageId send_p2p(NodeId sender, NodeId dest, MessageKind kind, Payload payload)
    {
        check_node(dest);
        auto msg = make(sender, kind, std::move(payload), Service::P2p);
        // Uniform latency plus (time, id) ordering keeps each channel FIFO.
        push(m_now + m_latency.p2pSteps, dest, Pending::P2p, msg);
        return msg->id;
    }

    std::optional<Tick> next_tick() const
    {
        if (m_queue.empty()) {
            return std::nullopt;
        }
        return m_queue.top().tick;
    }

    // Moves the clock forward without delivering anything; used by callers that
    // interleave their own timers with network events.
    void advance_to(Tick t)
    {
        if (t < m_now) {
            throw ProtocolError("simulated clock cannot move backwards");
        }
        if (auto next = next_tick(); next && t > *next) {
            throw ProtocolError("advance_to would skip pending deliveries");
        }
        m_now = t;
    }

    // Advances to the next event tick and returns every delivery due at it.
    std::vector<Delivery<Payload>> step()
    {
        std::vector<Delivery<Payload>> out;
        if (m_queue.empty()) {
            return out;
        }
        m_now = m_queue.top().tick;
        while (!m_queue.empty() && m_queue.top().tick == m_now) {
            Pending p = m_queue.top();
            m_queue.pop();
            switch (p.kind) {
            case Pending::Opt: emit(out, p.node, DeliveryKind::OptDeliver, p.msg); break;
            case Pending::To: emit(out, p.node, DeliveryKind::ToDeliver, p.msg); break;
            case Pending::P2p: emit(out, p.node, DeliveryKind::P2pDeliver, p.msg); break;
            case Pending::UrbArrive:
                m_urbBuffer[p.node].push_back(p.msg);
                drain_causal(out, p.node);
                break;
            }
        }
        return out;
    }

    const std::vector<LogEntry> &log() const noexcept { return m_log; }
    void set_logging(bool on) noexcept { m_logging = on; }
    std::uint64_t sent(Service s) const noexcept { return m_sent[static_cast<std::size_t>(s)]; }
    std::size_t buffered_urb(NodeId n) const { return m_urbBuffer.at(n).size(); }

private:
    struct Pending {
        enum Kind : std::uint8_t { Opt, To, UrbArrive, P2p };
        Tick tick;
        MessageId id;
        NodeId node;
        Kind kind;
        MessagePtr msg;
    };

    struct Later {
        bool operator()(const Pending &a, const Pending &b) const noexcept
        {
            return std::tie(a.tick, a.id, a.node, a.kind) > std::tie(b.tick, b.id, b.node, b.kind);
        }
    };

    void check_node(NodeId n) const
    {
        if (n >= m_nodes) {
            throw std::out_of_range("node id outside the group");
        }
    }

    std::shared_ptr<Message<Payload>> make(NodeId sender, MessageKind kind, Payload payload, Service s)
    {
        check_node(sender);
        if (!carries(s, kind)) {
            throw std::invalid_argument("message kind not allowed on this service");
        }
        auto msg = std::make_shared<Message<Payload>>();
        msg->id = ++m_nextId;
        msg->sender = sender;
        msg->kind = kind;
        msg->payload = std::move(payload);
        msg->sendTime = m_now;
        ++m_sent[static_cast<std::size_t>(s)];
        return msg;
    }

    void push(Tick t, NodeId n, typename Pending::Kind k, const MessagePtr &msg)
    {
        m_queue.push(Pending{t, msg->id, n, k, msg});
    }

    void emit(std::vector<Delivery<Payload>> &out, NodeId n, DeliveryKind k, const MessagePtr &msg)
    {
        out.push_back(Delivery<Payload>{m_now, n, k, msg});
        if (m_logging) {
            m_log.push_back(LogEntry{m_now, n, k, msg->id, msg->kind});
        }
    }

    bool deliverable(NodeId n, const Message<Payload> &m) const
    {
        const auto &have = m_urbDelivered[n];
        for (NodeId k = 0; k < m_nodes; ++k) {
            if (k == m.sender) {
                if (have[k] + 1 != m.deps[k]) {
                    return false;
                }
            } else if (have[k] < m.deps[k]) {
                return false;
            }
        }
        return true;
    }

    void drain_causal(std::vector<Delivery<Payload>> &out, NodeId n)
    {
        auto &buf = m_urbBuffer[n];
        bool progress = true;
        while (progress) {
            progress = false;
            for (auto it = buf.begin(); it != buf.end(); ++it) {
                if (deliverable(n, **it)) {
                    MessagePtr m = *it;
                    buf.erase(it);
                    ++m_urbDelivered[n][m->sender];
                    emit(out, n, DeliveryKind::UrDeliver, m);
                    progress = true;
                    break;
                }
            }
        }
    }

    std::size_t m_nodes;
    LatencyConfig m_latency;
    std::mt19937_64 m_rng;
    Tick m_now = 0;
    MessageId m_nextId = 0;
    std::uint64_t m_toSeq = 0;
    std::priority_queue<Pending, std::vector<Pending>, Later> m_queue;
    std::vector<std::vector<std::uint64_t>> m_urbDelivered;
    std::vector<std::uint64_t> m_urbSent;
    std::vector<std::vector<MessagePtr>> m_urbBuffer;
    std::vector<LogEntry> m_log;
    bool m_logging = true;
    std::uint64_t m_sent[3] = {0, 0, 0};
};

} // namespace lilac::gcs
