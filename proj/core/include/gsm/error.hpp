#pragma once

#include <stdexcept>
#include <string>

namespace gsm {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition (shape mismatch, bad count, ...).
class ContractViolation : public Error {
 public:
  using Error::Error;
};

/// Input geometry that cannot be processed: zero extent, open mesh, collinear points.
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// No heightfield cut within the attempt budget produced an acceptable volume ratio.
class NoValidCut : public Error {
 public:
  NoValidCut(const std::string& what, double last_ratio)
      : Error(what), last_ratio_(last_ratio) {}
  double last_ratio() const noexcept { return last_ratio_; }

 private:
  double last_ratio_;
};

/// The inward offset level set used for shell parts is empty.
class ThinShell : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during optimization.
class TrainingDivergence : public Error {
 public:
  using Error::Error;
};

}  // namespace gsm
