// Benchmark generators and transactional logic: the partitioned Bank benchmark
// with a locality knob and a TPC-C subset (Payment + New Order) behind a
// geographic load balancer.
//
// Transactional code is registered under a stable string id on every node, so
// a job can be re-executed wherever its commit phase ends up.

#pragma once

#include "lease.hpp"
#include "stm.hpp"
#include "types.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace lilac::workload {

using Rng = std::mt19937_64;

inline constexpr const char *kBankTransfer = "bank.transfer";
inline constexpr const char *kBankBalance = "bank.balance";
inline constexpr const char *kTpccPayment = "tpcc.payment";
inline constexpr const char *kTpccNewOrder = "tpcc.neworder";

struct WorkloadJob {
    std::string ref;
    std::vector<std::int64_t> params;
    bool readOnly = false;
    // Node the accessed partition is associated with; drives the optimal policy.
    std::optional<NodeId> home;
};

using Logic = std::function<Value(const WorkloadJob &, stm::Transaction &)>;

class Registry {
public:
    void add(std::string ref, Logic fn) { m_logic[std::move(ref)] = std::move(fn); }
    bool contains(const std::string &ref) const { return m_logic.count(ref) != 0; }

    const Logic &at(const std::string &ref) const
    {
        auto it = m_logic.find(ref);
        if (it == m_logic.end()) {
            throw ConfigError("no transactional logic registered for '" + ref + "'");
        }
        return it->second;
    }

    Value run(const WorkloadJob &job, stm::Transaction &tx) const { return at(job.ref)(job, tx); }

private:
    std::map<std::string, Logic> m_logic;
};

inline std::size_t pick(Rng &rng, std::size_t n)
{
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline bool coin(Rng &rng, double p)
{
    if (p <= 0.0) {
        return false;
    }
    if (p >= 1.0) {
        return true;
    }
    return std::bernoulli_distribution(p)(rng);
}

// ---------------------------------------------------------------------------
// Bank

struct OverloadSchedule {
    std::uint32_t hotPartition = 0;
    NodeId hotNode = 0;
    double hotProb = 0.2;
    double injectSecond = 40.0;
    // Fraction of the overloaded node's CPU eaten by external jobs.
    double externalLoad = 0.97;
};

struct BankConfig {
    std::size_t nodes = 4;
    std::size_t partitionsPerNode = 2;
    std::size_t accountsPerPartition = 1000;
    std::size_t classesPerPartition = 16;
    double locality = 1.0;
    double readWriteRatio = 0.5;
    std::size_t transfersPerTx = 2;
    std::size_t readOpsMin = 5;
    std::size_t readOpsMax = 20;
    Value initialBalance = 1000;
    Value maxAmount = 100;
    std::optional<OverloadSchedule> overload;

    std::size_t num_partitions() const noexcept { return nodes * partitionsPerNode; }
    std::size_t num_accounts() const noexcept { return num_partitions() * accountsPerPartition; }
    std::size_t num_classes() const noexcept { return num_partitions() * classesPerPartition; }
    NodeId partition_home(std::uint32_t p) const noexcept { return static_cast<NodeId>(p / partitionsPerNode); }
    ItemId account(std::uint32_t p, std::size_t i) const noexcept { return p * accountsPerPartition + i; }
    std::uint32_t partition_of(ItemId a) const noexcept { return static_cast<std::uint32_t>(a / accountsPerPartition); }

    ClassId class_of(ItemId a) const noexcept
    {
        return static_cast<ClassId>(partition_of(a) * classesPerPartition +
                                    lease::ConflictClassMap::mix(a) % classesPerPartition);
    }

    lease::ConflictClassMap class_map() const
    {
        return lease::ConflictClassMap(num_classes(), [cfg = *this](ItemId a) { return cfg.class_of(a); });
    }

    void validate() const
    {
        if (nodes == 0 || partitionsPerNode == 0 || classesPerPartition == 0) {
            throw ConfigError("bank: nodes, partitions and classes must be positive");
        }
        if (accountsPerPartition < 2 * transfersPerTx || accountsPerPartition < readOpsMax) {
            throw ConfigError("bank: partitions too small for the configured transaction sizes");
        }
        if (locality < 0.0 || locality > 1.0 || readWriteRatio < 0.0 || readWriteRatio > 1.0) {
            throw ConfigError("bank: probabilities must lie in [0,1]");
        }
        if (readOpsMin == 0 || readOpsMin > readOpsMax) {
            throw ConfigError("bank: invalid read-only length range");
        }
        if (nodes == 1 && locality < 1.0 && !overload) {
            throw ConfigError("bank: remote partitions need at least two nodes");
        }
        if (overload && (overload->hotPartition >= num_partitions() || overload->hotNode >= nodes)) {
            throw ConfigError("bank: overload partition/node out of range");
        }
    }

    void load(stm::Store &store) const
    {
        for (ItemId a = 0; a < num_accounts(); ++a) {
            store.put_initial(a, initialBalance);
        }
    }

    Value total_balance(const stm::Store &store) const
    {
        Value sum = 0;
        for (ItemId a = 0; a < num_accounts(); ++a) {
            sum += store.cell(a).value;
        }
        return sum;
    }
};

// The hot partition is the first one associated with `hotNode`.
inline OverloadSchedule overload_scenario(const BankConfig &cfg, NodeId hotNode = 0)
{
    OverloadSchedule s;
    s.hotNode = hotNode;
    s.hotPartition = static_cast<std::uint32_t>(hotNode * cfg.partitionsPerNode);
    return s;
}

namespace detail {

inline std::uint32_t local_partition(const BankConfig &cfg, NodeId node, Rng &rng)
{
    return static_cast<std::uint32_t>(node * cfg.partitionsPerNode + pick(rng, cfg.partitionsPerNode));
}

inline std::uint32_t remote_partition(const BankConfig &cfg, NodeId node, Rng &rng)
{
    const std::size_t others = (cfg.nodes - 1) * cfg.partitionsPerNode;
    auto idx = static_cast<std::uint32_t>(pick(rng, others));
    // Skip over the node's own block of partitions.
    const auto first = static_cast<std::uint32_t>(node * cfg.partitionsPerNode);
    return idx < first ? idx : idx + static_cast<std::uint32_t>(cfg.partitionsPerNode);
}

} // namespace detail

inline std::uint32_t bank_pick_partition(const BankConfig &cfg, NodeId node, Rng &rng)
{
    if (cfg.overload) {
        const auto &o = *cfg.overload;
        if (node == o.hotNode) {
            return o.hotPartition;
        }
        return coin(rng, o.hotProb) ? o.hotPartition : detail::local_partition(cfg, node, rng);
    }
    if (coin(rng, cfg.locality)) {
        return detail::local_partition(cfg, node, rng);
    }
    return detail::remote_partition(cfg, node, rng);
}

// params: transfer -> [partition, from, to, amount, ...]; balance -> [partition, account...]
inline WorkloadJob bank_next_tx(const BankConfig &cfg, NodeId node, Rng &rng)
{
    const std::uint32_t p = bank_pick_partition(cfg, node, rng);
    WorkloadJob job;
    job.home = cfg.partition_home(p);
    job.params.push_back(p);
    if (coin(rng, cfg.readWriteRatio)) {
        job.ref = kBankTransfer;
        for (std::size_t t = 0; t < cfg.transfersPerTx; ++t) {
            const std::size_t from = pick(rng, cfg.accountsPerPartition);
            std::size_t to = pick(rng, cfg.accountsPerPartition - 1);
            if (to >= from) {
                ++to;
            }
            const Value amount = 1 + static_cast<Value>(pick(rng, static_cast<std::size_t>(cfg.maxAmount)));
            job.params.push_back(static_cast<std::int64_t>(cfg.account(p, from)));
            job.params.push_back(static_cast<std::int64_t>(cfg.account(p, to)));
            job.params.push_back(amount);
        }
    } else {
        job.ref = kBankBalance;
        job.readOnly = true;
        const std::size_t n = cfg.readOpsMin + pick(rng, cfg.readOpsMax - cfg.readOpsMin + 1);
        for (std::size_t i = 0; i < n; ++i) {
            job.params.push_back(static_cast<std::int64_t>(cfg.account(p, pick(rng, cfg.accountsPerPartition))));
        }
    }
    return job;
}

// Moves money between account pairs; returns the total amount moved.
inline Value bank_transfer_logic(const WorkloadJob &job, stm::Transaction &tx)
{
    Value moved = 0;
    for (std::size_t i = 1; i + 2 < job.params.size(); i += 3) {
        const auto from = static_cast<ItemId>(job.params[i]);
        const auto to = static_cast<ItemId>(job.params[i + 1]);
        const Value amount = job.params[i + 2];
        tx.write(from, tx.read(from) - amount);
        tx.write(to, tx.read(to) + amount);
        moved += amount;
    }
    return moved;
}

inline Value bank_balance_logic(const WorkloadJob &job, stm::Transaction &tx)
{
    Value sum = 0;
    for (std::size_t i = 1; i < job.params.size(); ++i) {
        sum += tx.read(static_cast<ItemId>(job.params[i]));
    }
    return sum;
}

// ---------------------------------------------------------------------------
// TPC-C subset

struct TpccConfig {
    std::size_t nodes = 4;
    std::size_t warehousesPerNode = 1;
    std::size_t districts = 10;
    std::size_t customersPerDistrict = 300;
    std::size_t items = 1000;
    double paymentFraction = 0.95;
    double newOrderFraction = 0.05;
    double balancerMistakeProb = 0.2;
    double remoteStockProb = 0.01;
    std::size_t customerSlots = 3;
    std::size_t stockSlots = 2;
    Value initialStock = 50;
    Value initialDistrictYtd = 30000;

    enum Table : std::uint8_t {
        Warehouse = 1,
        WarehouseTax = 2,
        DistrictYtd = 3,
        DistrictNextOid = 4,
        Customer = 5,
        Stock = 6,
        Order = 7,
        OrderLine = 8,
    };

    std::size_t num_warehouses() const noexcept { return nodes * warehousesPerNode; }
    std::size_t classes_per_warehouse() const noexcept { return 1 + districts + customerSlots + stockSlots; }
    std::size_t num_classes() const noexcept { return num_warehouses() * classes_per_warehouse(); }
    NodeId region_of(std::size_t w) const noexcept { return static_cast<NodeId>(w / warehousesPerNode); }

    static ItemId key(Table t, std::size_t w, std::size_t d, std::uint64_t row) noexcept
    {
        return (static_cast<ItemId>(t) << 56) | (static_cast<ItemId>(w & 0xffff) << 40) |
               (static_cast<ItemId>(d & 0xff) << 32) | (row & 0xffffffffULL);
    }
    static Table table_of(ItemId k) noexcept { return static_cast<Table>(k >> 56); }
    static std::size_t warehouse_of(ItemId k) noexcept { return (k >> 40) & 0xffff; }
    static std::size_t district_of(ItemId k) noexcept { return (k >> 32) & 0xff; }
    static std::uint64_t row_of(ItemId k) noexcept { return k & 0xffffffffULL; }

    // Each warehouse owns a contiguous class range: the warehouse row, one class
    // per district (district rows and its orders), then hashed customer and
    // stock slots.
    ClassId class_of(ItemId k) const noexcept
    {
        const std::size_t base = warehouse_of(k) * classes_per_warehouse();
        std::size_t slot = 0;
        switch (table_of(k)) {
        case Warehouse:
        case WarehouseTax: slot = 0; break;
        case DistrictYtd:
        case DistrictNextOid:
        case Order:
        case OrderLine: slot = 1 + district_of(k) % districts; break;
        case Customer: slot = 1 + districts + lease::ConflictClassMap::mix(k) % customerSlots; break;
        case Stock: slot = 1 + districts + customerSlots + lease::ConflictClassMap::mix(k) % stockSlots; break;
        }
        return static_cast<ClassId>(base + slot);
    }

    lease::ConflictClassMap class_map() const
    {
        return lease::ConflictClassMap(num_classes(), [cfg = *this](ItemId k) { return cfg.class_of(k); });
    }

    void validate() const
    {
        if (nodes == 0 || warehousesPerNode == 0 || districts == 0 || customersPerDistrict == 0 || items == 0) {
            throw ConfigError("tpcc: sizes must be positive");
        }
        if (customerSlots == 0 || stockSlots == 0) {
            throw ConfigError("tpcc: customer and stock slots must be positive");
        }
        if (std::abs(paymentFraction + newOrderFraction - 1.0) > 1e-9) {
            throw ConfigError("tpcc: transaction mix must sum to 1");
        }
        if (balancerMistakeProb < 0.0 || balancerMistakeProb > 1.0) {
            throw ConfigError("tpcc: mistake probability must lie in [0,1]");
        }
        if (nodes == 1 && balancerMistakeProb > 0.0) {
            throw ConfigError("tpcc: balancer mistakes need at least two regions");
        }
    }

    void load(stm::Store &store) const
    {
        for (std::size_t w = 0; w < num_warehouses(); ++w) {
            store.put_initial(key(Warehouse, w, 0, 0), initialDistrictYtd * static_cast<Value>(districts));
            store.put_initial(key(WarehouseTax, w, 0, 0), 7);
            for (std::size_t d = 0; d < districts; ++d) {
                store.put_initial(key(DistrictYtd, w, d, 0), initialDistrictYtd);
                store.put_initial(key(DistrictNextOid, w, d, 0), 1);
                for (std::size_t c = 0; c < customersPerDistrict; ++c) {
                    store.put_initial(key(Customer, w, d, c), 0);
                }
            }
            for (std::size_t i = 0; i < items; ++i) {
                store.put_initial(key(Stock, w, 0, i), initialStock);
            }
        }
    }

    // Warehouse year-to-date must equal the sum over its districts.
    bool ytd_consistent(const stm::Store &store) const
    {
        for (std::size_t w = 0; w < num_warehouses(); ++w) {
            Value sum = 0;
            for (std::size_t d = 0; d < districts; ++d) {
                sum += store.cell(key(DistrictYtd, w, d, 0)).value;
            }
            if (store.cell(key(Warehouse, w, 0, 0)).value != sum) {
                return false;
            }
        }
        return true;
    }
};

// The balancer sends region r's requests to node r; with the mistake
// probability the request concerns a warehouse of another region.
inline std::pair<NodeId, WorkloadJob> tpcc_next_tx(const TpccConfig &cfg, NodeId region, Rng &rng)
{
    std::size_t w = 0;
    if (coin(rng, cfg.balancerMistakeProb)) {
        const std::size_t others = cfg.num_warehouses() - cfg.warehousesPerNode;
        w = pick(rng, others);
        if (w >= region * cfg.warehousesPerNode) {
            w += cfg.warehousesPerNode;
        }
    } else {
        w = region * cfg.warehousesPerNode + pick(rng, cfg.warehousesPerNode);
    }
    const std::size_t d = pick(rng, cfg.districts);
    const std::size_t c = pick(rng, cfg.customersPerDistrict);

    WorkloadJob job;
    job.home = cfg.region_of(w);
    if (coin(rng, cfg.paymentFraction)) {
        job.ref = kTpccPayment;
        const Value amount = 1 + static_cast<Value>(pick(rng, 5000));
        job.params = {static_cast<std::int64_t>(w), static_cast<std::int64_t>(d), static_cast<std::int64_t>(c), amount};
    } else {
        job.ref = kTpccNewOrder;
        const std::size_t lines = 5 + pick(rng, 11);
        job.params = {static_cast<std::int64_t>(w), static_cast<std::int64_t>(d), static_cast<std::int64_t>(c),
                      static_cast<std::int64_t>(lines)};
        for (std::size_t l = 0; l < lines; ++l) {
            std::size_t supply = w;
            if (cfg.num_warehouses() > 1 && coin(rng, cfg.remoteStockProb)) {
                supply = pick(rng, cfg.num_warehouses() - 1);
                if (supply >= w) {
                    ++supply;
                }
            }
            job.params.push_back(static_cast<std::int64_t>(pick(rng, cfg.items)));
            job.params.push_back(static_cast<std::int64_t>(supply));
            job.params.push_back(static_cast<std::int64_t>(1 + pick(rng, 10)));
        }
    }
    return {region, std::move(job)};
}

// params: [w, d, c, amount]; returns the customer's new balance.
inline Value tpcc_payment_logic(const WorkloadJob &job, stm::Transaction &tx)
{
    using T = TpccConfig;
    const auto w = static_cast<std::size_t>(job.params.at(0));
    const auto d = static_cast<std::size_t>(job.params.at(1));
    const auto c = static_cast<std::uint64_t>(job.params.at(2));
    const Value amount = job.params.at(3);
    const ItemId wk = T::key(T::Warehouse, w, 0, 0);
    const ItemId dk = T::key(T::DistrictYtd, w, d, 0);
    const ItemId ck = T::key(T::Customer, w, d, c);
    tx.write(wk, tx.read(wk) + amount);
    tx.write(dk, tx.read(dk) + amount);
    const Value balance = tx.read(ck) - amount;
    tx.write(ck, balance);
    return balance;
}

// params: [w, d, c, lines, (item, supplyW, qty) x lines]; returns the order id.
inline Value tpcc_new_order_logic(const WorkloadJob &job, stm::Transaction &tx)
{
    using T = TpccConfig;
    const auto w = static_cast<std::size_t>(job.params.at(0));
    const auto d = static_cast<std::size_t>(job.params.at(1));
    const auto c = static_cast<std::uint64_t>(job.params.at(2));
    const auto lines = static_cast<std::size_t>(job.params.at(3));
    (void)tx.read(T::key(T::WarehouseTax, w, 0, 0));
    (void)tx.read(T::key(T::Customer, w, d, c));
    const ItemId nk = T::key(T::DistrictNextOid, w, d, 0);
    const Value oid = tx.read(nk);
    tx.write(nk, oid + 1);
    for (std::size_t l = 0; l < lines; ++l) {
        const auto item = static_cast<std::uint64_t>(job.params.at(4 + 3 * l));
        const auto supply = static_cast<std::size_t>(job.params.at(5 + 3 * l));
        const Value qty = job.params.at(6 + 3 * l);
        const ItemId sk = T::key(T::Stock, supply, 0, item);
        Value s = tx.read(sk) - qty;
        if (s < 10) {
            s += 91;
        }
        tx.write(sk, s);
        tx.write(T::key(T::OrderLine, w, d, static_cast<std::uint64_t>(oid) * 16 + l), static_cast<Value>(item));
    }
    tx.write(T::key(T::Order, w, d, static_cast<std::uint64_t>(oid)), static_cast<Value>(lines));
    return oid;
}

// Approximate number of item accesses, used to size simulated execution time.
inline std::size_t op_count(const WorkloadJob &job)
{
    if (job.ref == kBankTransfer) {
        return 4 * ((job.params.size() - 1) / 3);
    }
    if (job.ref == kBankBalance) {
        return job.params.size() - 1;
    }
    if (job.ref == kTpccPayment) {
        return 6;
    }
    if (job.ref == kTpccNewOrder) {
        return 5 + 3 * static_cast<std::size_t>(job.params.at(3));
    }
    return job.params.size();
}

inline Registry standard_registry()
{
    Registry r;
    r.add(kBankTransfer, bank_transfer_logic);
    r.add(kBankBalance, bank_balance_logic);
    r.add(kTpccPayment, tpcc_payment_logic);
    r.add(kTpccNewOrder, tpcc_new_order_logic);
    return r;
}

} // namespace lilac::workload
