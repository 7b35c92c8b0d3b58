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

#ifndef CAPBIAS_CAPBIAS_HPP_
#define CAPBIAS_CAPBIAS_HPP_

#include "capbias/attribute.hpp"
#include "capbias/classifier.hpp"
#include "capbias/cooccur.hpp"
#include "capbias/corpus.hpp"
#include "capbias/error.hpp"
#include "capbias/lic.hpp"
#include "capbias/masking.hpp"
#include "capbias/rng.hpp"
#include "capbias/run.hpp"
#include "capbias/synth.hpp"
#include "capbias/tokenize.hpp"
#include "capbias/vocab.hpp"

#endif  // CAPBIAS_CAPBIAS_HPP_
