/*
 * Copyright 2026 The MRD Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef MRD_ERRORS_HPP
#define MRD_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace mrd {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or out-of-range arguments (shapes, ranges, non-finite data).
class InputError : public Error {
public:
  using Error::Error;
};

/// A call that is valid in isolation but not for the object's state.
class UsageError : public Error {
public:
  using Error::Error;
};

/// Factorization failed even after jitter escalation.
class NumericalError : public Error {
public:
  using Error::Error;
};

/// Views disagree on the number of rows.
class AlignmentError : public InputError {
public:
  using InputError::InputError;
};

class FileError : public Error {
public:
  using Error::Error;
};

/// Content could not be decoded; the message names the location.
class ParseError : public Error {
public:
  using Error::Error;
};

} // namespace mrd

#endif
