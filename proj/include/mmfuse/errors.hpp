#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mmfuse {

// Base for everything this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Operand shapes do not conform; message names the operands involved.
struct DimensionError : Error {
    using Error::Error;
};

// Input violates a documented precondition (bad label, bad rate, empty text, ...).
struct ValidationError : Error {
    using Error::Error;
};

// Invalid configuration value (routing iterations < 1, fractions not summing to 1, ...).
struct ConfigError : Error {
    using Error::Error;
};

// File/manifest problems; message carries the path and, where known, the line number.
struct IoError : Error {
    using Error::Error;
};

// Training produced a non-finite loss; carries where it happened.
struct NumericalError : Error {
    std::size_t epoch = 0;
    std::size_t batch = 0;
    NumericalError(const std::string& what, std::size_t epoch_idx, std::size_t batch_idx)
        : Error(what), epoch(epoch_idx), batch(batch_idx) {}
};

}  // namespace mmfuse
