#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace msense {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;

  /// Tags the error with the GD step it came from; the type is kept.
  void set_step(std::size_t k) {
    step_ = k;
    tagged_ = "step " + std::to_string(k) + ": " + std::runtime_error::what();
  }
  std::optional<std::size_t> step() const { return step_; }
  const char* what() const noexcept override { return step_ ? tagged_.c_str() : std::runtime_error::what(); }

 private:
  std::optional<std::size_t> step_;
  std::string tagged_;
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class NonFinite : public Error {
 public:
  using Error::Error;
};

class NotSymmetric : public Error {
 public:
  NotSymmetric(double asymmetry, double scale)
      : Error("matrix is not symmetric: |M - M^T|_F = " + std::to_string(asymmetry) +
              " relative to |M|_F = " + std::to_string(scale)),
        asymmetry(asymmetry) {}
  double asymmetry;
};

/// Raised when a matrix that must have full row rank does not.
class RankDeficient : public Error {
 public:
  explicit RankDeficient(double sigma_min, const std::string& what = "matrix is rank deficient")
      : Error(what + " (sigma_min = " + std::to_string(sigma_min) + ")"), sigma_min(sigma_min) {}
  double sigma_min;
};

class RankTooHigh : public Error {
 public:
  RankTooHigh(double sigma_next, double sigma_max)
      : Error("matrix rank exceeds bound: sigma_{r+1} = " + std::to_string(sigma_next) +
              ", sigma_1 = " + std::to_string(sigma_max)),
        sigma_next(sigma_next) {}
  double sigma_next;
};

class NonPositiveSpectrum : public Error {
 public:
  explicit NonPositiveSpectrum(double lambda_min)
      : Error("matrix has non-positive spectrum (lambda_min = " + std::to_string(lambda_min) + ")"),
        lambda_min(lambda_min) {}
  double lambda_min;
};

class ZeroMatrix : public Error {
 public:
  ZeroMatrix() : Error("top singular pair of a zero matrix is undefined") {}
};

/// The step guard eta * |R~| <= 2/3 failed.
class StepTooLarge : public Error {
 public:
  explicit StepTooLarge(double eta_norm)
      : Error("step too large: eta * |R + E^A| = " + std::to_string(eta_norm) + " > 2/3"),
        eta_norm(eta_norm) {}
  double eta_norm;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace msense
