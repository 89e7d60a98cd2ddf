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
//
// Convenience header pulling in the whole library.

#ifndef PANFUSE_PANFUSE_HPP_
#define PANFUSE_PANFUSE_HPP_

#include "panfuse/assignment.hpp"
#include "panfuse/catalog.hpp"
#include "panfuse/errors.hpp"
#include "panfuse/manifest.hpp"
#include "panfuse/mask.hpp"
#include "panfuse/panoptic_eval.hpp"
#include "panfuse/panoptic_map.hpp"
#include "panfuse/parallel.hpp"
#include "panfuse/per_sample.hpp"
#include "panfuse/pipeline.hpp"
#include "panfuse/png_io.hpp"
#include "panfuse/stuff_fusion.hpp"
#include "panfuse/synth.hpp"
#include "panfuse/tensor.hpp"
#include "panfuse/thing_fusion.hpp"
#include "panfuse/uncertainty.hpp"

#endif  // PANFUSE_PANFUSE_HPP_
