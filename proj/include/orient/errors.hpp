// Copyright 2026 The OrientLab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace orient {

/// Root of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define ORIENT_DEFINE_ERROR(Name)                     \
  class Name : public Error {                         \
   public:                                            \
    explicit Name(const std::string& what)            \
        : Error(std::string(#Name ": ") + what) {}    \
  };

ORIENT_DEFINE_ERROR(DegenerateQuaternion)
ORIENT_DEFINE_ERROR(InvalidConfig)
ORIENT_DEFINE_ERROR(CameraInsideScene)
ORIENT_DEFINE_ERROR(ShapeMismatch)
ORIENT_DEFINE_ERROR(InvalidBackward)
ORIENT_DEFINE_ERROR(NonFiniteValue)
ORIENT_DEFINE_ERROR(IoError)
ORIENT_DEFINE_ERROR(InvalidTimestep)
ORIENT_DEFINE_ERROR(InvalidStep)
ORIENT_DEFINE_ERROR(MissingModel)
ORIENT_DEFINE_ERROR(InvalidInput)
ORIENT_DEFINE_ERROR(Diverged)

#undef ORIENT_DEFINE_ERROR

}  // namespace orient
