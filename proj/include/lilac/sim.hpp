// Timer queue and per-node CPU model for the discrete-event simulation.

#pragma once

#include "types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <queue>
#include <tuple>
#include <vector>

namespace lilac::sim {

// Callbacks ordered by (tick, insertion order).
class Scheduler {
public:
    void at(Tick t, std::function<void()> fn) { m_queue.push(Entry{t, ++m_seq, std::move(fn)}); }

    std::optional<Tick> next_tick() const
    {
        if (m_queue.empty()) {
            return std::nullopt;
        }
        return m_queue.top().tick;
    }

    bool empty() const noexcept { return m_queue.empty(); }
    std::size_t size() const noexcept { return m_queue.size(); }

    // Runs everything due at `now`, including callbacks scheduled for `now` by
    // the callbacks themselves.
    void run_due(Tick now)
    {
        while (!m_queue.empty() && m_queue.top().tick <= now) {
            auto fn = std::move(const_cast<Entry &>(m_queue.top()).fn);
            m_queue.pop();
            fn();
        }
    }

    void clear() { m_queue = {}; }

private:
    struct Entry {
        Tick tick;
        std::uint64_t seq;
        std::function<void()> fn;
    };
    struct Later {
        bool operator()(const Entry &a, const Entry &b) const noexcept
        {
            return std::tie(a.tick, a.seq) > std::tie(b.tick, b.seq);
        }
    };

    std::priority_queue<Entry, std::vector<Entry>, Later> m_queue;
    std::uint64_t m_seq = 0;
};

// Non-preemptive FIFO multi-core CPU. External load, once injected, stretches
// every job started afterwards by 1 / (1 - load) and counts toward utilisation.
class Cpu {
public:
    Cpu(std::size_t cores, Tick window) : m_free(std::max<std::size_t>(cores, 1), 0), m_window(std::max<Tick>(window, 1))
    {
    }

    void inject_external_load(Tick from, double load)
    {
        m_loadFrom = from;
        m_load = std::clamp(load, 0.0, 0.99);
    }

    double external_load(Tick now) const noexcept { return (m_loadFrom && now >= *m_loadFrom) ? m_load : 0.0; }

    // Returns the completion tick of a job of `work` ticks submitted at `now`.
    Tick submit(Tick now, Tick work)
    {
        auto core = std::min_element(m_free.begin(), m_free.end());
        const Tick start = std::max(now, *core);
        Tick duration = work;
        if (const double l = external_load(start); l > 0.0 && work > 0) {
            duration = static_cast<Tick>(std::ceil(static_cast<double>(work) / (1.0 - l)));
        }
        *core = start + duration;
        if (duration > 0) {
            m_busy.push_back({start, start + duration});
            m_total += duration;
        }
        return start + duration;
    }

    // Busy fraction over the trailing window plus external load, capped at 1.
    double utilization(Tick now)
    {
        const Tick lo = now > m_window ? now - m_window : 0;
        while (!m_busy.empty() && m_busy.front().second <= lo) {
            m_busy.pop_front();
        }
        Tick busy = 0;
        for (const auto &[s, e] : m_busy) {
            const Tick a = std::max(s, lo);
            const Tick b = std::min(e, now);
            if (b > a) {
                busy += b - a;
            }
        }
        const double span = static_cast<double>(now - lo) * static_cast<double>(m_free.size());
        const double frac = span > 0.0 ? static_cast<double>(busy) / span : 0.0;
        return std::min(1.0, frac + external_load(now));
    }

    // Core-ticks of work done in [0, t); t must not precede the last
    // utilization() query by more than one window.
    Tick busy_until(Tick t) const
    {
        Tick future = 0;
        for (const auto &[s, e] : m_busy) {
            if (e > t) {
                future += e - std::max(s, t);
            }
        }
        return m_total - future;
    }

    std::size_t cores() const noexcept { return m_free.size(); }

private:
    std::vector<Tick> m_free;
    Tick m_window;
    std::deque<std::pair<Tick, Tick>> m_busy;
    Tick m_total = 0;
    std::optional<Tick> m_loadFrom;
    double m_load = 0.0;
};

} // namespace lilac::sim
