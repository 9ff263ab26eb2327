#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

namespace rvrs {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Target has no model parameters to differentiate.
class NoThetaError : public Error {
 public:
  using Error::Error;
};

// (z, eps) pair does not lie on the reparameterized path of the proposal.
class InconsistentPathError : public Error {
 public:
  using Error::Error;
};

// Rejection sampler drew more proposals than allowed; usually a badly tuned T.
class BudgetExhaustedError : public Error {
 public:
  BudgetExhaustedError(const std::string& what, long long proposals_drawn)
      : Error(what), proposals_drawn_(proposals_drawn) {}
  long long proposals_drawn() const { return proposals_drawn_; }

 private:
  long long proposals_drawn_;
};

class BatchTooSmallError : public Error {
 public:
  using Error::Error;
};

class EmptyMaskError : public Error {
 public:
  using Error::Error;
};

// Moment xi = E_post[p(x,z)/q(z)] does not converge on the grid.
class DivergentXiError : public Error {
 public:
  using Error::Error;
};

// Training produced a non-finite value. Carries the last finite state.
class DivergedError : public Error {
 public:
  DivergedError(const std::string& what, Eigen::VectorXd last_good_params,
                double last_good_T, long long iteration)
      : Error(what),
        last_good_params_(std::move(last_good_params)),
        last_good_T_(last_good_T),
        iteration_(iteration) {}

  const Eigen::VectorXd& last_good_params() const { return last_good_params_; }
  double last_good_T() const { return last_good_T_; }
  long long iteration() const { return iteration_; }

 private:
  Eigen::VectorXd last_good_params_;
  double last_good_T_;
  long long iteration_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

}  // namespace rvrs
