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


// Training configuration file (YAML) read by the CLI.
//
//   train: { learning_rate: 0.001, batch_size: 32, epochs: 35, seed: 123 }
//   adam: { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
//   architecture: { hidden: [500, 300, 100, 20], dropout: 0.2, leaky_slope: 0.01 }

#pragma once

#include <yaml-cpp/yaml.h>

#include <optional>
#include <string>

#include "copresence/mlp.hpp"
#include "copresence/scenario_config.hpp"

namespace copresence {

struct TrainSettings {
    TrainConfig train;
    MlpArchitecture architecture;
    std::optional<int> epochs; // set only when the file names it
};

inline TrainSettings parse_train_settings(const YAML::Node& root, const std::string& source = "<config>") {
    using detail::check_keys;
    using detail::read_opt;
    TrainSettings s;
    try {
        if (!root || root.IsNull())
            return s;
        check_keys(root, {"train", "adam", "architecture"}, source);
        if (const auto t = root["train"]) {
            check_keys(t, {"learning_rate", "batch_size", "epochs", "seed"}, source + ": train");
            read_opt(t, "learning_rate", s.train.learning_rate);
            read_opt(t, "batch_size", s.train.batch_size);
            read_opt(t, "seed", s.train.rng_seed);
            if (t["epochs"]) {
                s.epochs = t["epochs"].as<int>();
                s.train.epochs = *s.epochs;
            }
        }
        if (const auto a = root["adam"]) {
            check_keys(a, {"beta1", "beta2", "epsilon"}, source + ": adam");
            read_opt(a, "beta1", s.train.beta1);
            read_opt(a, "beta2", s.train.beta2);
            read_opt(a, "epsilon", s.train.epsilon);
        }
        if (const auto a = root["architecture"]) {
            check_keys(a, {"hidden", "dropout", "leaky_slope"}, source + ": architecture");
            if (a["hidden"])
                s.architecture.hidden = a["hidden"].as<std::vector<Eigen::Index>>();
            read_opt(a, "dropout", s.architecture.dropout_rate);
            read_opt(a, "leaky_slope", s.architecture.leaky_slope);
            s.train.leaky_slope = s.architecture.leaky_slope;
        }
    } catch (const YAML::Exception& e) {
        throw DataError(source + ": " + e.what());
    }
    try {
        s.train.validate();
    } catch (const UsageError& e) {
        throw DataError(source + ": " + e.what());
    }
    if (!(s.architecture.dropout_rate >= 0.0 && s.architecture.dropout_rate < 1.0))
        throw DataError(source + ": architecture.dropout must lie in [0, 1)");
    for (auto w : s.architecture.hidden)
        if (w < 1)
            throw DataError(source + ": architecture.hidden widths must be positive");
    return s;
}

inline TrainSettings load_train_settings(const std::string& path) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(path);
    } catch (const YAML::Exception& e) {
        throw DataError(path + ": " + e.what());
    }
    return parse_train_settings(root, path);
}

} // namespace copresence
