#include <lilac/serializability.hpp>

#include <gtest/gtest.h>

using namespace lilac;

namespace {

CommitRecord rec(TxId id, stm::WriterMap reads, std::vector<ItemId> writes)
{
    return CommitRecord{id, 0, std::move(reads), std::move(writes)};
}

} // namespace

TEST(Serializability, DisjointTransactionsInAnyOrder)
{
    const auto a = rec(1, {{1, kInitialWriter}}, {1});
    const auto b = rec(2, {{2, kInitialWriter}}, {2});
    EXPECT_TRUE(check_serializability({a, b}).serializable);
    EXPECT_TRUE(check_serializability({b, a}).serializable);
    EXPECT_TRUE(check_serializability({}).serializable);
}

TEST(Serializability, LostUpdateIsACycle)
{
    // Both read the initial x, both write it.
    const auto a = rec(1, {{7, kInitialWriter}}, {7});
    const auto b = rec(2, {{7, kInitialWriter}}, {7});
    const auto v = check_serializability({a, b});
    EXPECT_FALSE(v.serializable);
    EXPECT_EQ(v.reason, "dependency cycle");
    EXPECT_EQ(v.cycle.size(), 2u);
}

TEST(Serializability, WriteSkewIsACycle)
{
    const auto a = rec(1, {{1, kInitialWriter}, {2, kInitialWriter}}, {1});
    const auto b = rec(2, {{1, kInitialWriter}, {2, kInitialWriter}}, {2});
    EXPECT_FALSE(check_serializability({a, b}).serializable);
}

TEST(Serializability, ChainOfReadsFromIsSerial)
{
    const auto a = rec(1, {{1, kInitialWriter}}, {1});
    const auto b = rec(2, {{1, 1}}, {1, 2});
    const auto c = rec(3, {{1, 2}, {2, 2}}, {2});
    EXPECT_TRUE(check_serializability({a, b, c}).serializable);
}

TEST(Serializability, ReadOfUnknownVersionIsRejected)
{
    const auto a = rec(1, {{1, 99}}, {2});
    const auto v = check_serializability({a});
    EXPECT_FALSE(v.serializable);
    EXPECT_FALSE(v.reason.empty());
}

TEST(Serializability, DuplicateIdsAreRejected)
{
    const auto a = rec(1, {}, {1});
    EXPECT_FALSE(check_serializability({a, a}).serializable);
}
