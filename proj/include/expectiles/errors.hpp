#pragma once

#include <stdexcept>
#include <string>

namespace expectiles {

// Invalid inputs (domain violations, malformed documents) throw
// std::invalid_argument. Failures of a numerical procedure on valid input
// throw NumericalError or one of its subclasses.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace expectiles
