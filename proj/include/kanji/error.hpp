/*
 * Copyright 2026 The Kanji Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>

namespace kanji {

/// Base class of all toolchain errors.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed arguments, shapes or tensor contents.
class InvalidInputError : public Error {
public:
  using Error::Error;
};

/// Execution-plan construction failures (accumulator gate, scheme limits).
class PlanError : public Error {
public:
  using Error::Error;
};

/// Unrepresentable quantization format combinations (negative shifts).
class FormatError : public Error {
public:
  using Error::Error;
};

/// Unreadable or inconsistent data files.
class DataError : public Error {
public:
  using Error::Error;
};

/// Operation invoked in the wrong lifecycle state.
class StateError : public Error {
public:
  using Error::Error;
};

/// NaN or numeric blow-up detected during evaluation.
class NumericError : public Error {
public:
  using Error::Error;
};

} // namespace kanji
