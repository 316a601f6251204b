#pragma once

#include <stdexcept>
#include <string>

namespace cpdist {

// Malformed or inadmissible input data: empty change-point sets, bad CSV
// cells, non-positive prices for log returns and the like.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A numerical post-condition failed (asymmetric matrix, eigenvalues that do
// not sum to the trace, a Laplacian that is not positive semi-definite).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cpdist
