#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace linerf {

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
template <class Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <class Scalar>
using Matrix3X = Eigen::Matrix<Scalar, 3, Eigen::Dynamic>;

using Vec3d = Vec3<double>;
using Mat4d = Eigen::Matrix4d;

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// Error taxonomy. Each subsystem throws the most specific type; callers that
// only care about failure can catch linerf::Error.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IngestionError : public Error {
 public:
  IngestionError(std::string file, const std::string& what)
      : Error(file + ": " + what), file_(std::move(file)) {}
  const std::string& file() const { return file_; }

 private:
  std::string file_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class VerificationError : public Error {
 public:
  using Error::Error;
};

// Raised by the optimizer and the training loop. `index` is the offending
// parameter-group index (optimizer) or iteration (training loop).
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::int64_t index, std::uint64_t batch_seed = 0)
      : Error(what), index_(index), batch_seed_(batch_seed) {}
  std::int64_t index() const { return index_; }
  std::uint64_t batch_seed() const { return batch_seed_; }

 private:
  std::int64_t index_;
  std::uint64_t batch_seed_;
};

/// splitmix64 finalizer; used to derive independent per-ray / per-view seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace linerf
