#include <lilac/gcs.hpp>

#include <gtest/gtest.h>

#include <map>
#include <random>
#include <vector>

using namespace lilac;
using namespace lilac::gcs;

namespace {

using Net = GroupComm<int>;

LatencyConfig unit_latency() { return LatencyConfig{1, 2, 1, 3, 0.0, 0}; }

std::vector<Delivery<int>> drain(Net &net)
{
    std::vector<Delivery<int>> all;
    while (net.next_tick()) {
        for (auto &d : net.step()) {
            all.push_back(std::move(d));
        }
    }
    return all;
}

} // namespace

TEST(Gcs, OabDeliversOptThenToAtStepLatencies)
{
    Net net(4, unit_latency());
    net.advance_to(10);
    const auto id = net.oa_broadcast(0, MessageKind::LeaseRequest, 7);
    std::map<NodeId, Tick> opt, to;
    for (const auto &d : drain(net)) {
        ASSERT_EQ(d.msg->id, id);
        (d.kind == DeliveryKind::OptDeliver ? opt : to)[d.node] = d.tick;
    }
    ASSERT_EQ(opt.size(), 4u);
    ASSERT_EQ(to.size(), 4u);
    for (NodeId n = 0; n < 4; ++n) {
        EXPECT_EQ(opt[n], 11u);
        EXPECT_EQ(to[n], 13u);
    }
}

TEST(Gcs, ConcurrentOabBroadcastsShareOneTotalOrder)
{
    Net net(4, unit_latency());
    net.oa_broadcast(0, MessageKind::LeaseRequest, 1);
    net.oa_broadcast(1, MessageKind::LeaseRequest, 2);
    std::map<NodeId, std::vector<MessageId>> order;
    for (const auto &d : drain(net)) {
        if (d.kind == DeliveryKind::ToDeliver) {
            order[d.node].push_back(d.msg->id);
        }
    }
    ASSERT_EQ(order.size(), 4u);
    for (NodeId n = 1; n < 4; ++n) {
        EXPECT_EQ(order[n], order[0]);
    }
    EXPECT_EQ(order[0].size(), 2u);
}

TEST(Gcs, SingleNodeOptPrecedesTo)
{
    Net net(1, unit_latency());
    net.oa_broadcast(0, MessageKind::LeaseRequest, 1);
    auto ds = drain(net);
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds[0].kind, DeliveryKind::OptDeliver);
    EXPECT_EQ(ds[1].kind, DeliveryKind::ToDeliver);
    EXPECT_LT(ds[0].tick, ds[1].tick);
}

TEST(Gcs, UrbDeliversAfterTwoSteps)
{
    Net net(4, unit_latency());
    net.advance_to(5);
    net.ur_broadcast(2, MessageKind::Commit, 1);
    const auto ds = drain(net);
    ASSERT_EQ(ds.size(), 4u);
    for (const auto &d : ds) {
        EXPECT_EQ(d.tick, 7u);
        EXPECT_EQ(d.kind, DeliveryKind::UrDeliver);
    }
}

TEST(Gcs, UrbRespectsCausalityUnderJitter)
{
    auto lat = unit_latency();
    lat.urbJitter = 6;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Net net(4, lat, seed);
        const auto m1 = net.ur_broadcast(0, MessageKind::Commit, 1);
        MessageId m2 = 0;
        std::map<NodeId, std::vector<MessageId>> seen;
        while (net.next_tick()) {
            for (const auto &d : net.step()) {
                seen[d.node].push_back(d.msg->id);
                if (d.node == 0 && d.msg->id == m1 && m2 == 0) {
                    m2 = net.ur_broadcast(0, MessageKind::Commit, 2);
                }
            }
        }
        ASSERT_NE(m2, 0u);
        for (NodeId n = 0; n < 4; ++n) {
            ASSERT_EQ(seen[n].size(), 2u);
            EXPECT_EQ(seen[n][0], m1);
            EXPECT_EQ(seen[n][1], m2);
        }
    }
}

TEST(Gcs, CausalChainAcrossSenders)
{
    auto lat = unit_latency();
    lat.urbJitter = 5;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Net net(3, lat, seed);
        const auto m1 = net.ur_broadcast(0, MessageKind::Commit, 1);
        MessageId m2 = 0;
        std::map<NodeId, std::vector<MessageId>> seen;
        while (net.next_tick()) {
            for (const auto &d : net.step()) {
                seen[d.node].push_back(d.msg->id);
                if (d.node == 1 && d.msg->id == m1) {
                    m2 = net.ur_broadcast(1, MessageKind::Commit, 2);
                }
            }
        }
        for (NodeId n = 0; n < 3; ++n) {
            ASSERT_EQ(seen[n].size(), 2u);
            EXPECT_EQ(seen[n][0], m1) << "seed " << seed;
            EXPECT_EQ(seen[n][1], m2);
        }
    }
}

TEST(Gcs, PointToPointLatencyAndFifo)
{
    Net net(2, unit_latency());
    net.advance_to(3);
    const auto a = net.send_p2p(0, 1, MessageKind::Forward, 1);
    const auto b = net.send_p2p(0, 1, MessageKind::Forward, 2);
    const auto ds = drain(net);
    ASSERT_EQ(ds.size(), 2u);
    EXPECT_EQ(ds[0].tick, 4u);
    EXPECT_EQ(ds[0].msg->id, a);
    EXPECT_EQ(ds[1].msg->id, b);
    EXPECT_EQ(ds[0].node, 1u);
}

TEST(Gcs, SelfSendIsNotImmediate)
{
    Net net(2, unit_latency());
    net.send_p2p(0, 0, MessageKind::ForwardReply, 1);
    EXPECT_TRUE(net.step().size() == 1);
    EXPECT_EQ(net.now(), 1u);
}

TEST(Gcs, ServiceRejectsWrongMessageKind)
{
    Net net(2, unit_latency());
    EXPECT_THROW(net.oa_broadcast(0, MessageKind::Commit, 1), std::invalid_argument);
    EXPECT_THROW(net.ur_broadcast(0, MessageKind::LeaseRequest, 1), std::invalid_argument);
    EXPECT_THROW(net.send_p2p(0, 1, MessageKind::LeaseFreed, 1), std::invalid_argument);
    EXPECT_THROW(net.send_p2p(0, 5, MessageKind::Forward, 1), std::out_of_range);
}

TEST(Gcs, InvalidLatenciesRejected)
{
    EXPECT_THROW(Net(2, LatencyConfig{1, 2, 3, 3, 0.0, 0}), ConfigError);
    EXPECT_THROW(Net(2, LatencyConfig{0, 2, 1, 3, 0.0, 0}), ConfigError);
    EXPECT_THROW(Net(0, unit_latency()), ConfigError);
}

namespace {

std::vector<LogEntry> random_traffic(std::uint64_t seed, std::size_t count)
{
    auto lat = unit_latency();
    lat.urbJitter = 4;
    lat.oabReorderProb = 0.3;
    lat.oabTotalSteps = 5;
    Net net(4, lat, seed);
    std::mt19937_64 rng(seed);
    std::size_t sent = 0;
    while (sent < count || net.next_tick()) {
        if (sent < count) {
            const auto who = static_cast<NodeId>(rng() % 4);
            switch (rng() % 3) {
            case 0: net.oa_broadcast(who, MessageKind::LeaseRequest, 0); break;
            case 1: net.ur_broadcast(who, MessageKind::Commit, 0); break;
            default: net.send_p2p(who, static_cast<NodeId>(rng() % 4), MessageKind::Forward, 0); break;
            }
            ++sent;
        }
        if (net.next_tick() && (sent == count || rng() % 2 == 0)) {
            net.step();
        }
    }
    return net.log();
}

} // namespace

TEST(Gcs, RandomBroadcastsDeliveredExactlyOnce)
{
    auto lat = unit_latency();
    lat.urbJitter = 4;
    Net net(4, lat, 9);
    std::mt19937_64 rng(9);
    std::vector<MessageId> ids;
    for (int i = 0; i < 100; ++i) {
        ids.push_back(net.ur_broadcast(static_cast<NodeId>(rng() % 4), MessageKind::Commit, i));
        if (rng() % 3 == 0 && net.next_tick()) {
            net.step();
        }
    }
    drain(net);
    std::map<std::pair<NodeId, MessageId>, int> count;
    for (const auto &e : net.log()) {
        ++count[{e.node, e.msg}];
    }
    for (auto id : ids) {
        for (NodeId n = 0; n < 4; ++n) {
            EXPECT_EQ((count[{n, id}]), 1);
        }
    }
    EXPECT_EQ(count.size(), 400u);
}

TEST(Gcs, TotalOrderAgreementAndOptPrecedenceUnderReordering)
{
    const auto log = random_traffic(3, 300);
    std::map<NodeId, std::vector<MessageId>> to;
    std::map<std::pair<NodeId, MessageId>, Tick> optAt;
    for (const auto &e : log) {
        if (e.kind == DeliveryKind::OptDeliver) {
            optAt[{e.node, e.msg}] = e.tick;
        } else if (e.kind == DeliveryKind::ToDeliver) {
            to[e.node].push_back(e.msg);
            auto it = optAt.find({e.node, e.msg});
            ASSERT_NE(it, optAt.end());
            EXPECT_LT(it->second, e.tick);
        }
    }
    for (NodeId n = 1; n < 4; ++n) {
        EXPECT_EQ(to[n], to[0]);
    }
}

TEST(Gcs, IdenticalSeedsGiveIdenticalLogs)
{
    EXPECT_EQ(random_traffic(11, 200), random_traffic(11, 200));
    EXPECT_NE(random_traffic(11, 200), random_traffic(12, 200));
}

TEST(Gcs, AdvanceCannotSkipDeliveries)
{
    Net net(2, unit_latency());
    net.send_p2p(0, 1, MessageKind::Forward, 1);
    EXPECT_THROW(net.advance_to(5), ProtocolError);
    net.advance_to(1);
    EXPECT_THROW(net.advance_to(0), ProtocolError);
}
