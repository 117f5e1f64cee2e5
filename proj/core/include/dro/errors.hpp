#ifndef DRO_ERRORS_HPP
#define DRO_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace dro {

// Violated precondition: non-finite inputs, out-of-range parameters,
// unsupported set/penalty combinations.
class invalid_input : public std::invalid_argument {
 public:
  explicit invalid_input(const std::string& what)
      : std::invalid_argument(what) {}
};

// Malformed or inconsistent experiment configuration. The CLI maps this to
// exit code 2.
class config_error : public std::runtime_error {
 public:
  explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure at runtime: divergence, exceeded iteration caps,
// degenerate denominators. The CLI maps this to exit code 3.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace dro

#endif  // DRO_ERRORS_HPP
