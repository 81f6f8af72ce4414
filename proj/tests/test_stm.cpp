#include <lilac/stm.hpp>

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace lilac;
using namespace lilac::stm;

namespace {

Store seeded(NodeId id = 0)
{
    Store s(id);
    for (ItemId k = 0; k < 8; ++k) {
        s.put_initial(k, static_cast<Value>(100 + k));
    }
    return s;
}

} // namespace

TEST(Stm, BeginSnapshotsTheClock)
{
    Store s = seeded();
    EXPECT_EQ(s.begin(1, 0, false).startVersion, 0u);
    EXPECT_EQ(s.begin(2, 0, false).startVersion, s.begin(3, 0, true).startVersion);
    s.apply_writeset({{1, 5}}, 9);
    EXPECT_EQ(s.begin(4, 0, false).startVersion, 1u);
}

TEST(Stm, ReadOwnWriteLeavesReadSetAlone)
{
    Store s = seeded();
    auto tx = s.begin(1, 0, false);
    s.write(tx, 3, 42);
    EXPECT_EQ(s.read(tx, 3), 42);
    EXPECT_TRUE(tx.readSet.empty());
    EXPECT_EQ(s.read(tx, 4), 104);
    ASSERT_EQ(tx.readSet.count(4), 1u);
    EXPECT_EQ(tx.readSet.at(4).version, 0u);
}

TEST(Stm, ReadNewerThanSnapshotIsStale)
{
    Store s = seeded();
    auto tx = s.begin(1, 0, false);
    s.apply_writeset({{2, 7}}, 5);
    try {
        s.read(tx, 2);
        FAIL() << "expected StaleRead";
    } catch (const StaleRead &e) {
        EXPECT_EQ(e.key(), 2u);
    }
    EXPECT_EQ(s.read(tx, 1), 101);
}

TEST(Stm, WriteInReadOnlyTransactionThrows)
{
    Store s = seeded();
    auto tx = s.begin(1, 0, true);
    EXPECT_THROW(s.write(tx, 1, 0), ReadOnlyViolation);
    EXPECT_THROW(s.read(tx, 99), UnknownKey);
}

TEST(Stm, ValidateDetectsConflictingCommit)
{
    Store s = seeded();
    auto tx = s.begin(1, 0, false);
    s.read(tx, 1);
    s.read(tx, 2);
    EXPECT_TRUE(s.validate(tx.readSet));
    EXPECT_TRUE(s.validate({}));
    s.apply_writeset({{5, 1}}, 7);
    EXPECT_TRUE(s.validate(tx.readSet));
    s.apply_writeset({{2, 1}}, 8);
    EXPECT_FALSE(s.validate(tx.readSet));
    EXPECT_FALSE(s.validate_writers(writers_of(tx.readSet)));
}

TEST(Stm, ApplyBumpsClockOnce)
{
    Store s = seeded();
    for (int i = 0; i < 7; ++i) {
        s.apply_writeset({{7, i}}, static_cast<TxId>(i + 1));
    }
    ASSERT_EQ(s.clock(), 7u);
    s.apply_writeset({{0, 5}, {1, 6}}, 50);
    EXPECT_EQ(s.clock(), 8u);
    EXPECT_EQ(s.cell(0).value, 5);
    EXPECT_EQ(s.cell(0).version, 8u);
    EXPECT_EQ(s.cell(1).writer, 50u);
    s.apply_writeset({}, 51);
    EXPECT_EQ(s.clock(), 8u);
}

TEST(Stm, SameApplyOrderGivesIdenticalStores)
{
    Store a = seeded(0), b = seeded(1);
    std::mt19937_64 rng(4);
    for (TxId t = 1; t <= 200; ++t) {
        WriteSet ws;
        for (int i = 0; i < 3; ++i) {
            ws[rng() % 8] = static_cast<Value>(rng() % 1000);
        }
        a.apply_writeset(ws, t);
        b.apply_writeset(ws, t);
    }
    std::ostringstream da, db;
    a.dump(da);
    b.dump(db);
    EXPECT_EQ(da.str(), db.str());
    EXPECT_EQ(a.canonical(), b.canonical());
}

TEST(Stm, CanonicalIgnoresLocalVersionNumbers)
{
    // Non-conflicting write-sets applied in different orders.
    Store a = seeded(0), b = seeded(1);
    a.apply_writeset({{1, 10}}, 1);
    a.apply_writeset({{2, 20}}, 2);
    b.apply_writeset({{2, 20}}, 2);
    b.apply_writeset({{1, 10}}, 1);
    EXPECT_NE(a.cell(1).version, b.cell(1).version);
    EXPECT_EQ(a.canonical(), b.canonical());
}

TEST(Stm, ValidationSoundnessAndClockMonotonicity)
{
    std::mt19937_64 rng(21);
    Store s = seeded();
    std::uint64_t lastClock = 0;
    for (TxId t = 1; t <= 500; ++t) {
        auto tx = s.begin(t, 0, false);
        std::map<ItemId, Value> observed;
        for (int i = 0; i < 3; ++i) {
            const ItemId k = rng() % 8;
            observed[k] = s.read(tx, k);
        }
        if (rng() % 2) {
            s.apply_writeset({{rng() % 8, static_cast<Value>(rng() % 50)}}, 10000 + t);
        }
        if (s.validate(tx.readSet)) {
            auto again = s.begin(t, 0, true);
            for (const auto &[k, v] : observed) {
                EXPECT_EQ(s.read(again, k), v);
            }
        }
        EXPECT_GE(s.clock(), lastClock);
        lastClock = s.clock();
        s.for_each([&](ItemId, const VersionedCell &c) { EXPECT_LE(c.version, s.clock()); });
    }
}

// Writer-based validation on a replica that has seen the same commits agrees
// with version-based validation on the origin.
TEST(Stm, RemoteValidationMatchesLocalValidation)
{
    std::mt19937_64 rng(33);
    for (int trial = 0; trial < 2000; ++trial) {
        Store origin = seeded(0), target = seeded(1);
        // Unrelated history shifts the target's clock.
        for (int i = 0; i < static_cast<int>(rng() % 3); ++i) {
            target.apply_writeset({{100 + static_cast<ItemId>(i), 0}}, 900000 + i);
        }
        TxId next = 1;
        auto commit_both = [&](WriteSet ws) {
            origin.apply_writeset(ws, next);
            target.apply_writeset(ws, next);
            ++next;
        };
        commit_both({{rng() % 8, 1}});
        auto tx = origin.begin(5000, 0, false);
        for (int i = 0; i < 3; ++i) {
            origin.read(tx, rng() % 8);
        }
        for (int i = 0; i < static_cast<int>(rng() % 3); ++i) {
            commit_both({{rng() % 8, static_cast<Value>(i)}});
        }
        EXPECT_EQ(target.validate_writers(writers_of(tx.readSet)), origin.validate(tx.readSet));
    }
}

TEST(Stm, TransactionBindsContext)
{
    Store s = seeded();
    auto ctx = s.begin(1, 2, false);
    Transaction tx(s, ctx);
    tx.write(3, tx.read(3) + 1);
    EXPECT_TRUE(tx.exists(3));
    EXPECT_FALSE(tx.exists(1234));
    EXPECT_EQ(ctx.writeSet.at(3), 104);
    EXPECT_EQ(tx.context().origin, 2u);
}
