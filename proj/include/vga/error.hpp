#pragma once

#include <stdexcept>
#include <string>

namespace vga {

// Error taxonomy shared by every module. The CLI maps ConfigError to exit
// code 2 and every other failure to exit code 1.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Incompatible tensor/matrix extents.
struct DimensionError : Error { using Error::Error; };
/// Invalid hyperparameter or module wiring.
struct ConfigError : Error { using Error::Error; };
/// Malformed propagation graph (non-tree edges, isolated nodes, ...).
struct StructureError : Error { using Error::Error; };
/// Unreadable text record (claims file).
struct ParseError : Error { using Error::Error; };
/// Unreadable binary container (tensor file, PPM, model archive).
struct FormatError : Error { using Error::Error; };
/// API misuse (non-scalar loss, mismatched list lengths, ...).
struct ContractError : Error { using Error::Error; };
/// Non-finite values where finite ones are required.
struct NumericError : Error { using Error::Error; };

}  // namespace vga
