#pragma once

#include <stdexcept>
#include <string>

namespace rowsteal {

/// A caller passed a value outside the documented domain of an operation.
struct ParameterError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A page operation touched a frame whose owner does not permit it.
struct OwnershipError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// No free frame is available to satisfy an allocation.
struct OutOfMemoryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A massage or round plan cannot be realized as stated.
struct PlanError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The victim model is not resident in the memory system.
struct PlacementError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Internal consistency of the simulation was violated.  This is never a
/// recoverable condition: it means the simulator itself produced two
/// irreconcilable facts.
struct IntegrityError : std::logic_error {
  using std::logic_error::logic_error;
};

/// Malformed or unreadable on-disk artifact (template, model, ledger, ...).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rowsteal
