#include "raresim/errors.hpp"

#include <sstream>

namespace raresim {

std::string format_vector(const Eigen::VectorXd& v) {
  std::ostringstream os;
  os.precision(10);
  os << '(';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) os << ", ";
    os << v[i];
  }
  os << ')';
  return os.str();
}

DyingComponent::DyingComponent(int component, double weight)
    : FitError("dying component " + std::to_string(component) + ": mixture weight " +
               std::to_string(weight) + " fell below 1e-8"),
      component_(component) {}

NonMonotoneOutcome::NonMonotoneOutcome(const Eigen::VectorXd& rare, const Eigen::VectorXd& safe)
    : Error("non-monotone outcome: rare point " + format_vector(rare) +
            " lies componentwise below safe point " + format_vector(safe) +
            " (canonical coordinates)"),
      rare_(rare),
      safe_(safe) {}

NonMonotoneOutcome::NonMonotoneOutcome(const std::string& context,
                                       const NonMonotoneOutcome& inner)
    : Error(context + ": " + inner.what()), rare_(inner.rare_), safe_(inner.safe_) {}

SolverError::SolverError(const std::string& what, Eigen::VectorXd last_iterate)
    : Error(what), last_(std::move(last_iterate)) {}

}  // namespace raresim
