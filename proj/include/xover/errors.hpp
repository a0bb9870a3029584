#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace xover {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

/// Malformed input: bad configuration, out-of-range parameters, bad files.
class ValidationError : public Error {
   public:
    using Error::Error;
};

/// A computation could not be carried out (singular system, divergence).
class NumericalError : public Error {
   public:
    using Error::Error;
};

/// The information matrix of a design is singular, so the treatment
/// contrasts cannot be estimated.
class NonEstimableError : public NumericalError {
   public:
    NonEstimableError(const std::string& what, std::size_t rank, std::size_t dim)
        : NumericalError(what + " (information rank " + std::to_string(rank) + " of " +
                         std::to_string(dim) + ")"),
          rank_(rank),
          dim_(dim) {}

    std::size_t rank() const noexcept { return rank_; }
    std::size_t dim() const noexcept { return dim_; }

   private:
    std::size_t rank_;
    std::size_t dim_;
};

}  // namespace xover
