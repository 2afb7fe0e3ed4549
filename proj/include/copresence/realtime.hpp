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


// Windowed copresence decisions over a stream of per-frame predictions.

#pragma once

#include <Eigen/Dense>

#include <deque>
#include <optional>
#include <span>
#include <string>

#include "copresence/csi_core.hpp"
#include "copresence/error.hpp"
#include "copresence/model_io.hpp"

namespace copresence {

struct Vote {
    double timestamp = 0.0;
    bool copresent = false;
};

struct WindowDecision {
    double timestamp = 0.0; // newest buffered frame
    bool copresent = false;
    int votes_copresent = 0;
    int total = 0;
};

// Strict majority; a tie is non-copresent.
inline WindowDecision majority_vote(std::span<const Vote> votes) {
    WindowDecision d;
    for (const auto& v : votes) {
        d.total += 1;
        d.votes_copresent += v.copresent ? 1 : 0;
        d.timestamp = std::max(d.timestamp, v.timestamp);
    }
    d.copresent = 2 * d.votes_copresent > d.total;
    return d;
}

// Raw measurement -> scaled model input, per the model's pipeline.
inline Eigen::VectorXd model_input(const Pipeline& p, const CsiMeasurement& m) {
    m.validate();
    if (m.config->preset != p.preset)
        throw DataError("measurement preset '" + m.config->preset + "' does not match model preset '" + p.preset +
                        "'");
    Eigen::VectorXd row = feature_row(m, p.options);
    if (p.norm) {
        if (p.norm->mean.size() != row.size())
            throw DataError("model normalisation covers " + std::to_string(p.norm->mean.size()) +
                            " features but the measurement yields " + std::to_string(row.size()));
        row = ((row - p.norm->mean).array() / p.norm->stddev.array()).matrix();
    }
    return row;
}

class DecisionWindow {
public:
    explicit DecisionWindow(double window_length = 5.0, std::size_t min_measurements = 3)
        : window_length_(window_length), min_measurements_(min_measurements) {
        if (!(window_length > 0.0) || min_measurements == 0)
            throw UsageError("decision window needs a positive length and quorum");
    }

    double window_length() const { return window_length_; }
    std::size_t min_measurements() const { return min_measurements_; }
    std::size_t size() const { return buffer_.size(); }
    const std::deque<Vote>& buffer() const { return buffer_; }

    std::optional<WindowDecision> push_prediction(double timestamp, bool copresent) {
        if (!buffer_.empty() && timestamp < buffer_.back().timestamp)
            throw DataError("decision window: timestamp " + std::to_string(timestamp) +
                            " precedes the previous frame at " + std::to_string(buffer_.back().timestamp));
        buffer_.push_back({timestamp, copresent});
        while (!buffer_.empty() && buffer_.front().timestamp < timestamp - window_length_)
            buffer_.pop_front();
        if (buffer_.size() < min_measurements_)
            return std::nullopt;
        const std::vector<Vote> votes(buffer_.begin(), buffer_.end());
        return majority_vote(votes);
    }

    // Per-frame hard prediction at copresent probability 0.5.
    std::optional<WindowDecision> push(double timestamp, const CsiMeasurement& m, const TrainedModel& model) {
        const Eigen::VectorXd x = model_input(model.pipeline, m);
        const double p = predict_proba(model.net, x.transpose()).col(1)(0);
        return push_prediction(timestamp, p >= 0.5);
    }

private:
    double window_length_;
    std::size_t min_measurements_;
    std::deque<Vote> buffer_;
};

} // namespace copresence
