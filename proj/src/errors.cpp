#include "recad/errors.hpp"

namespace recad {

Error::Error(std::string kind, const std::string& message)
    : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

DegenerateDimension::DegenerateDimension(std::size_t dim, const std::string& name)
    : Error("degenerate-dimension",
            "dimension " + std::to_string(dim) + (name.empty() ? "" : " (" + name + ")") +
                " is constant"),
      dim_(dim) {}

InstabilityError::InstabilityError(std::size_t step, const std::string& message)
    : Error("instability", "step " + std::to_string(step) + ": " + message), step_(step) {}

DivergenceError::DivergenceError(std::size_t step, const std::string& message)
    : Error("divergence", "step " + std::to_string(step) + ": " + message), step_(step) {}

}  // namespace recad
