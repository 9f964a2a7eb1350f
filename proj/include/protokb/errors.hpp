#pragma once

#include <stdexcept>
#include <string>

namespace protokb {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define PROTOKB_DEFINE_ERROR(Name)     \
  class Name : public Error {          \
   public:                             \
    using Error::Error;                \
  }

PROTOKB_DEFINE_ERROR(ParseError);
PROTOKB_DEFINE_ERROR(ValidationError);
PROTOKB_DEFINE_ERROR(UnknownIdError);
PROTOKB_DEFINE_ERROR(DimensionMismatch);
PROTOKB_DEFINE_ERROR(EmptyInput);
PROTOKB_DEFINE_ERROR(EmptyMask);
PROTOKB_DEFINE_ERROR(ExpanderUnavailable);
PROTOKB_DEFINE_ERROR(ExtractorUnavailable);
PROTOKB_DEFINE_ERROR(EncoderFailure);
PROTOKB_DEFINE_ERROR(AlignmentError);
PROTOKB_DEFINE_ERROR(ConfigError);
PROTOKB_DEFINE_ERROR(NonFiniteGradient);
PROTOKB_DEFINE_ERROR(IoError);

#undef PROTOKB_DEFINE_ERROR

inline void require_dims(long got, long want, const char* what) {
  if (got != want) {
    throw DimensionMismatch(std::string(what) + ": expected " + std::to_string(want) +
                            ", got " + std::to_string(got));
  }
}

}  // namespace protokb
