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


// Transfer to a new scenario: freeze the leading representation layers of a
// base model and retrain the remaining head on the new data.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "copresence/csi_core.hpp"
#include "copresence/error.hpp"
#include "copresence/measurement_io.hpp"
#include "copresence/mlp.hpp"
#include "copresence/model_io.hpp"

namespace copresence {

inline constexpr std::size_t kDefaultFrozenLayers = 2;
inline constexpr int kDefaultTransferEpochs = 10;

struct TransferReport {
    std::size_t frozen_layers = 0;
    int epochs = 0;
    std::uint64_t flops_full = 0;
    std::uint64_t flops_trainable = 0;
    double flop_ratio = 1.0;
    std::vector<double> loss_history;
};

struct TransferResult {
    TrainedModel model;
    TransferReport report;
};

// Works on already-scaled data; used directly inside cross-validation.
inline TrainResult transfer_head(const MlpModel& base, const Eigen::MatrixXd& x_scaled, std::span<const int> y,
                                 int epochs, TrainConfig cfg, std::size_t frozen_layers = kDefaultFrozenLayers) {
    if (x_scaled.cols() != base.input_dim())
        throw DataError("transfer: new data has " + std::to_string(x_scaled.cols()) +
                        " features but base model expects " + std::to_string(base.input_dim()) +
                        " (cross-band transfer is not supported)");
    cfg.epochs = epochs;
    return train(freeze_prefix(base, frozen_layers), x_scaled, y, cfg);
}

// Normalisation statistics are re-fit on the new training data.
inline TransferResult transfer_train(const TrainedModel& base, const Eigen::MatrixXd& x_new_raw, std::span<const int> y,
                                     int epochs = kDefaultTransferEpochs, const TrainConfig& cfg = {},
                                     std::size_t frozen_layers = kDefaultFrozenLayers) {
    if (x_new_raw.cols() != base.net.input_dim())
        throw DataError("transfer: new data has " + std::to_string(x_new_raw.cols()) +
                        " features but base model expects " + std::to_string(base.net.input_dim()) +
                        " (cross-band transfer is not supported)");
    const NormStats stats = fit_variance_scaling(x_new_raw);
    TrainResult tr = transfer_head(base.net, apply_scaling(x_new_raw, stats), y, epochs, cfg, frozen_layers);

    TransferResult out;
    out.model.pipeline = base.pipeline;
    out.model.pipeline.norm = stats;
    out.report.frozen_layers = frozen_layers;
    out.report.epochs = epochs;
    out.report.flops_full = flops_forward(tr.model, false);
    out.report.flops_trainable = flops_forward(tr.model, true);
    out.report.flop_ratio = out.report.flops_trainable > 0
                                ? static_cast<double>(out.report.flops_full) /
                                      static_cast<double>(out.report.flops_trainable)
                                : 0.0;
    out.report.loss_history = std::move(tr.loss_history);
    out.model.net = std::move(tr.model);
    return out;
}

inline TransferResult transfer_train(const TrainedModel& base, const FeatureMatrix& new_data,
                                     int epochs = kDefaultTransferEpochs, const TrainConfig& cfg = {},
                                     std::size_t frozen_layers = kDefaultFrozenLayers) {
    if (new_data.preset != base.pipeline.preset)
        throw DataError("transfer: base model was trained on preset '" + base.pipeline.preset +
                        "' but new data uses '" + new_data.preset + "'");
    if (!(new_data.options == base.pipeline.options))
        throw DataError("transfer: feature options of new data differ from the base model");
    return transfer_train(base, new_data.data, new_data.labels, epochs, cfg, frozen_layers);
}

inline std::string transfer_report_text(const TransferReport& r) {
    std::ostringstream os;
    os << "# copresence-transfer v1\n";
    os << "frozen_layers=" << r.frozen_layers << '\n';
    os << "epochs=" << r.epochs << '\n';
    os << "flops_full=" << r.flops_full << '\n';
    os << "flops_trainable=" << r.flops_trainable << '\n';
    os << "flop_ratio=" << io::format_double(r.flop_ratio) << '\n';
    for (std::size_t e = 0; e < r.loss_history.size(); ++e)
        os << "loss." << e + 1 << '=' << io::format_double(r.loss_history[e]) << '\n';
    return os.str();
}

} // namespace copresence
