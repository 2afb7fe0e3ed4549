// SPDX-License-Identifier: Apache-2.0
//
// copresence: CSI-based copresence detection toolkit
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------


#pragma once

#include "copresence/channel_sim.hpp"
#include "copresence/csi_core.hpp"
#include "copresence/error.hpp"
#include "copresence/eval.hpp"
#include "copresence/feature_io.hpp"
#include "copresence/measurement_io.hpp"
#include "copresence/mlp.hpp"
#include "copresence/model_io.hpp"
#include "copresence/realtime.hpp"
#include "copresence/rrr.hpp"
#include "copresence/scenario_config.hpp"
#include "copresence/train_config.hpp"
#include "copresence/transfer.hpp"
