#pragma once

#include <stdexcept>
#include <string>

namespace aggr {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Malformed scene document. The message starts with the JSON path of the
/// offending value (e.g. "/material/poisson").
struct ParseError : Error {
  ParseError(const std::string& path, const std::string& what)
      : Error(path + ": " + what), path(path) {}
  std::string path;
};

/// Well-formed input that violates a model invariant.
struct ValidationError : Error {
  using Error::Error;
};

struct GeometryError : Error {
  using Error::Error;
};

/// Linear solve that did not reach its tolerance.
struct SolverError : Error {
  SolverError(const std::string& what, double residual)
      : Error(what + " (relative residual " + std::to_string(residual) + ")"),
        residual(residual) {}
  double residual;
};

}  // namespace aggr
