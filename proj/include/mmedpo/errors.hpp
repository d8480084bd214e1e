#pragma once

#include <stdexcept>
#include <string>

namespace mmedpo {

/// Base class for every error raised by the library. The CLI maps the
/// concrete subclass onto a process exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Precondition or invariant violated by caller-supplied data.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Malformed file or message payload (JSON, tensor headers, agent replies).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Network-level failure talking to an agent endpoint, after retries.
class TransportError : public Error {
public:
    TransportError(const std::string& what, int attempts)
        : Error(what + " (after " + std::to_string(attempts) + " attempts)"), attempts_(attempts) {}

    int attempts() const noexcept { return attempts_; }

private:
    int attempts_;
};

/// The remote side answered, but not with what the wire contract requires,
/// or a multi-agent exchange could not make progress.
class ProtocolError : public Error {
public:
    explicit ProtocolError(const std::string& what, int status = 0) : Error(what), status_(status) {}

    int status() const noexcept { return status_; }

private:
    int status_;
};

/// Non-finite loss or gradient during optimisation.
class TrainingError : public Error {
public:
    TrainingError(const std::string& what, int epoch, int batch)
        : Error(what + " (epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch) + ")"),
          epoch_(epoch), batch_(batch) {}

    int epoch() const noexcept { return epoch_; }
    int batch() const noexcept { return batch_; }

private:
    int epoch_;
    int batch_;
};

}  // namespace mmedpo
