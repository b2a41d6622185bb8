// Shared scalar/matrix aliases and the solver failure type.
#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace lowrank
{
  using Index = Eigen::Index;
  using Matrix = Eigen::MatrixXd;
  using Vector = Eigen::VectorXd;

  //! thrown when an iterative or direct solve cannot reach its tolerance
  class SolveFailure : public std::runtime_error
  {
    public:
      SolveFailure(const std::string& what, double residual_, int iterations_)
        : std::runtime_error(what), residual(residual_), iterations(iterations_) {}

      double residual = 0;
      int iterations = 0;
  };
}
