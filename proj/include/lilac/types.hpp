// Core identifiers and error types shared by every layer of the replicated STM.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace lilac {

using NodeId = std::uint32_t;
using Tick = std::uint64_t;
using ItemId = std::uint64_t;
using ClassId = std::uint32_t;
using TxId = std::uint64_t;
using MessageId = std::uint64_t;
using Value = std::int64_t;

// Writer id of a cell that was never written by a transaction.
inline constexpr TxId kInitialWriter = 0;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised when a protocol invariant is broken; always indicates a bug.
class ProtocolError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class UnderflowViolation : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

class MissingLor : public ProtocolError {
public:
    using ProtocolError::ProtocolError;
};

} // namespace lilac
