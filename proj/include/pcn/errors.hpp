#pragma once

#include <stdexcept>
#include <string>

namespace pcn {

// Error taxonomy shared by the whole pipeline. The CLI maps these onto
// process exit codes (config -> 2, data/label/format -> 3, numeric -> 4).
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shapes or axes do not line up.
struct DimensionError : Error {
  using Error::Error;
};

// API misuse: non-scalar loss, missing grad, absent score field, etc.
struct ContractError : Error {
  using Error::Error;
};

// Class ids outside the declared label space.
struct LabelError : Error {
  using Error::Error;
};

// NaN inputs, degenerate normalizations, non-finite losses.
struct NumericError : Error {
  using Error::Error;
};

// Malformed on-disk artifacts (datasets, checkpoints).
struct FormatError : Error {
  using Error::Error;
};

// Invalid or contradictory experiment configuration.
struct ConfigError : Error {
  using Error::Error;
};

// Sampling or generation cannot be satisfied by the data at hand.
struct DataError : Error {
  using Error::Error;
};

}  // namespace pcn
