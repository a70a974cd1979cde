#pragma once

#include <stdexcept>
#include <string>

namespace hbdnn {

// Every failure the library surfaces derives from Error; kind() is the
// machine-readable tag used in CLI error reports.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define HBDNN_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                     \
   public:                                                        \
    explicit Name(const std::string& what) : Error(#Name, what) {} \
  };

HBDNN_DEFINE_ERROR(ValidationError)
HBDNN_DEFINE_ERROR(SchemaError)
HBDNN_DEFINE_ERROR(NonConvergence)
HBDNN_DEFINE_ERROR(NumericalFailure)
HBDNN_DEFINE_ERROR(DegenerateChains)
HBDNN_DEFINE_ERROR(ShapeMismatch)
HBDNN_DEFINE_ERROR(NonFiniteLoss)
HBDNN_DEFINE_ERROR(TrainingFailure)
HBDNN_DEFINE_ERROR(InvalidRange)
HBDNN_DEFINE_ERROR(GridExhausted)
HBDNN_DEFINE_ERROR(DesignMismatch)
HBDNN_DEFINE_ERROR(FingerprintMismatch)

#undef HBDNN_DEFINE_ERROR

}  // namespace hbdnn
