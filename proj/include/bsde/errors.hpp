#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace bsde {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A problem or configuration violates a standing hypothesis of the solver.
class ValidationError : public Error {
public:
    ValidationError(std::string hypothesis, const std::string& detail)
        : Error(hypothesis + ": " + detail), hypothesis_(std::move(hypothesis)) {}
    const std::string& hypothesis() const noexcept { return hypothesis_; }

private:
    std::string hypothesis_;
};

/// f0 was evaluated outside the H_alpha ball it is assumed Lipschitz on.
class RadiusExceeded : public Error {
public:
    RadiusExceeded(double radius, double observed)
        : Error("radius exceeded: |U|_alpha = " + std::to_string(observed) + " > R = " +
                std::to_string(radius)),
          radius_(radius),
          observed_(observed) {}
    double radius() const noexcept { return radius_; }
    double observed() const noexcept { return observed_; }

private:
    double radius_;
    double observed_;
};

/// The window length selected from the contraction conditions is not positive.
class WindowCollapse : public Error {
public:
    using Error::Error;
};

/// An iteration failed to converge or stopped contracting.
class Divergence : public Error {
public:
    using Error::Error;
};

}  // namespace bsde
