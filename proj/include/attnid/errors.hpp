// Copyright 2026 The attnid Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef ATTNID_ERRORS_HPP
#define ATTNID_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace attnid {

/// Base class for every failure raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Input violates a documented precondition (non-finite data, bad ids, ...).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ConvergenceError : public Error {
public:
    using Error::Error;
};

/// Pearson correlation of a constant vector.
class UndefinedCorrelation : public Error {
public:
    using Error::Error;
};

/// The augmented left null space is empty, so the head's attention is
/// uniquely determined by its output.
class IdentifiableHead : public Error {
public:
    using Error::Error;
};

class DegenerateAttribution : public Error {
public:
    DegenerateAttribution(std::size_t layer, std::size_t target)
        : Error("degenerate attribution: all gradients vanish for layer " + std::to_string(layer) +
                ", position " + std::to_string(target)),
          layer_(layer), target_(target) {}

    std::size_t layer() const noexcept { return layer_; }
    std::size_t target() const noexcept { return target_; }

private:
    std::size_t layer_;
    std::size_t target_;
};

class TrainingDiverged : public Error {
public:
    explicit TrainingDiverged(std::size_t step)
        : Error("training diverged (non-finite loss) at step " + std::to_string(step)), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Malformed container file; carries the byte offset where parsing stopped.
class ParseError : public Error {
public:
    ParseError(std::size_t offset, const std::string& what)
        : Error("parse error at byte " + std::to_string(offset) + ": " + what), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace attnid

#endif // ATTNID_ERRORS_HPP
