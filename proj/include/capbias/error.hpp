/*
 * Copyright 2026 The capbias Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef CAPBIAS_ERROR_HPP_
#define CAPBIAS_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace capbias {

// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input, violated precondition or missing requirement. The CLI
// maps it to exit code 2.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or parameters during training. The CLI maps it to exit
// code 3.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace capbias

#endif  // CAPBIAS_ERROR_HPP_
