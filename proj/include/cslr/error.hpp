#pragma once

#include <stdexcept>
#include <string>

namespace cslr {

// Base of every error raised by the library. Callers that only care about
// "the input was bad" vs "the run failed" can catch these two branches.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
public:
    using Error::Error;
};

// The labeling needs more frames than the logit sequence provides.
class InfeasibleAlignment : public Error {
public:
    InfeasibleAlignment(std::size_t frames, std::size_t required)
        : Error("infeasible alignment: " + std::to_string(frames) + " frames, labeling needs " +
                std::to_string(required)),
          frames_(frames), required_(required) {}

    std::size_t frames() const noexcept { return frames_; }
    std::size_t required() const noexcept { return required_; }

private:
    std::size_t frames_;
    std::size_t required_;
};

class OracleLimit : public Error {
public:
    using Error::Error;
};

class SequenceTooShort : public Error {
public:
    SequenceTooShort(const std::string& variant, std::size_t length, std::size_t minimum)
        : Error("sequence too short for " + variant + ": T=" + std::to_string(length) +
                ", minimum T=" + std::to_string(minimum)),
          minimum_(minimum) {}

    std::size_t minimum() const noexcept { return minimum_; }

private:
    std::size_t minimum_;
};

class StateError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Non-finite loss or gradient during training.
class Divergence : public Error {
public:
    using Error::Error;
};

}  // namespace cslr
