#pragma once

#include <stdexcept>
#include <string>

namespace mfloc {

/// Base of every exception thrown by the toolkit.
class error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class domain_error : public error {
public:
  using error::error;
};

/// Invalid or inconsistent configuration (bad keys, bad grid, bad tolerances).
class config_error : public error {
public:
  using error::error;
};

/// An iterative solver or adaptive quadrature failed to meet its tolerance.
class convergence_error : public error {
public:
  using error::error;
};

/// Time stepping left its stability envelope or leaked too much mass.
class instability_error : public error {
public:
  using error::error;
};

class io_error : public error {
public:
  using error::error;
};

} // namespace mfloc
