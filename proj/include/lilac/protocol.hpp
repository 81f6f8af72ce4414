// Wire vocabulary exchanged between replicas.

#pragma once

#include "dtd.hpp"
#include "gcs.hpp"
#include "lease.hpp"
#include "stm.hpp"
#include "workload.hpp"

#include <memory>
#include <optional>
#include <variant>
#include <vector>

namespace lilac {

using StatsPtr = std::shared_ptr<const dtd::StatsGossip>;

struct LeaseRequestMsg {
    lease::LeaseRequest req;
    StatsPtr stats;
};

struct LeaseFreedMsg {
    std::vector<lease::LeaseId> lors;
};

struct CommitMsg {
    TxId txId = 0;
    NodeId origin = 0;
    NodeId committer = 0;
    stm::WriteSet writeSet;
    std::optional<Value> result;
    std::uint32_t nClasses = 0;
    bool reused = false;
    bool forwarded = false;
    StatsPtr stats;
};

struct ForwardMsg {
    TxId txId = 0;
    NodeId origin = 0;
    NodeId target = 0;
    workload::WorkloadJob job;
    stm::WriterMap readSetMeta;
    stm::WriteSet writeSet;
    std::vector<ClassId> classSet;
    Value result = 0;
};

struct ForwardReplyMsg {
    TxId txId = 0;
    bool aborted = true;
};

using Wire = std::variant<LeaseRequestMsg, LeaseFreedMsg, CommitMsg, ForwardMsg, ForwardReplyMsg, dtd::StatsGossip>;

inline gcs::MessageKind kind_of(const Wire &w)
{
    switch (w.index()) {
    case 0: return gcs::MessageKind::LeaseRequest;
    case 1: return gcs::MessageKind::LeaseFreed;
    case 2: return gcs::MessageKind::Commit;
    case 3: return gcs::MessageKind::Forward;
    case 4: return gcs::MessageKind::ForwardReply;
    default: return gcs::MessageKind::StatsGossip;
    }
}

} // namespace lilac
