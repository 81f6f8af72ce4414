// Transaction forwarder: ships a transaction's commit phase to another replica.
//
// The target takes leases on the forwarded class set, then validates the
// origin's read metadata against its own store without re-executing. Only if
// that fails does it re-execute, and a re-execution never travels again: the
// target requests whatever leases it needs itself.

#pragma once

#include "protocol.hpp"
#include "replication.hpp"

#include <map>
#include <memory>

namespace lilac {

class TransactionForwarder {
public:
    TransactionForwarder(ReplicationManager &rm, Runtime &rt) : m_rm(rm), m_rt(rt)
    {
        m_rm.set_forwarder([this](const TaskPtr &task, NodeId target) { forward(task, target); });
    }

    void forward(const TaskPtr &task, NodeId target)
    {
        ForwardMsg fm;
        fm.txId = task->id;
        fm.origin = task->origin;
        fm.target = target;
        fm.job = task->job;
        fm.readSetMeta = stm::writers_of(task->ctx.readSet);
        fm.writeSet = task->ctx.writeSet;
        fm.classSet = classes_of(m_rm.class_map(), task->ctx);
        fm.result = task->result;
        ++m_sent[task->id];
        m_rt.on_forward(task->id, task->origin, target);
        m_rt.send_p2p(task->origin, target, std::move(fm));
    }

    void handle_forwarded(const ForwardMsg &fm)
    {
        auto task = std::make_shared<CommitTask>();
        task->id = fm.txId;
        task->origin = fm.origin;
        task->job = fm.job;
        task->ctx.txId = fm.txId;
        task->ctx.origin = fm.origin;
        task->ctx.writeSet = fm.writeSet;
        task->result = fm.result;
        task->retriesLeft = m_rm.config().maxRetries;
        task->forwarded = true;
        if (m_rm.config().reExecuteAlways) {
            task->reExecuteFirst = true;
        } else {
            task->remoteMeta = fm.readSetMeta;
        }
        m_rm.acquire(task, fm.classSet);
    }

    void on_reply(const ForwardReplyMsg &reply)
    {
        if (reply.aborted) {
            m_rm.on_remote_abort(reply.txId);
        }
    }

    // Forward count per transaction originated here.
    const std::map<TxId, int> &sent() const noexcept { return m_sent; }

private:
    ReplicationManager &m_rm;
    Runtime &m_rt;
    std::map<TxId, int> m_sent;
};

} // namespace lilac
