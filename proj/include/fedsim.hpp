/*
 * Copyright 2026 The FedSim Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include "fedsim/cli.hpp"
#include "fedsim/config.hpp"
#include "fedsim/datagen.hpp"
#include "fedsim/dht_estimator.hpp"
#include "fedsim/engine.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/hetero_metrics.hpp"
#include "fedsim/io.hpp"
#include "fedsim/model.hpp"
#include "fedsim/parallel.hpp"
#include "fedsim/rng.hpp"
#include "fedsim/selection.hpp"
