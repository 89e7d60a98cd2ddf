// Copyright 2026 The Panfuse Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef PANFUSE_ERRORS_HPP_
#define PANFUSE_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace panfuse {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// A referenced file does not exist or cannot be opened.
class InputError : public Error {
 public:
  explicit InputError(const std::string& what) : Error(what) {}
};

// A file exists but its contents are not in the expected format
// (wrong magic bytes, unsupported version, bad element type, malformed JSON).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& what) : Error(what) {}
};

// Wrong magic bytes at the start of a binary file.
class BadMagicError : public FormatError {
 public:
  explicit BadMagicError(const std::string& what) : FormatError(what) {}
};

// A file ended before the declared payload was complete.
class TruncatedError : public FormatError {
 public:
  explicit TruncatedError(const std::string& what) : FormatError(what) {}
};

// Array dimensions are inconsistent with each other or with a payload size.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(what) {}
};

// A manifest, catalog or parameter set violates its documented invariants.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(what) {}
};

}  // namespace panfuse

#endif  // PANFUSE_ERRORS_HPP_
