/*
 * pendepth - Pose and expression normalization of facial depth images.
 *
 * Copyright 2026 The pendepth Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#ifndef PEN_PEN_HPP_
#define PEN_PEN_HPP_

#include "pen/datagen.hpp"
#include "pen/error.hpp"
#include "pen/estimate.hpp"
#include "pen/eval.hpp"
#include "pen/external.hpp"
#include "pen/hha.hpp"
#include "pen/image.hpp"
#include "pen/io.hpp"
#include "pen/model.hpp"
#include "pen/model_io.hpp"
#include "pen/pipeline.hpp"
#include "pen/projection.hpp"
#include "pen/random.hpp"
#include "pen/render.hpp"
#include "pen/toy_model.hpp"

#endif /* PEN_PEN_HPP_ */
