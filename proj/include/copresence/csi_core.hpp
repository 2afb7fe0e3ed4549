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


// CSI preprocessing: channel layouts, magnitude/phase extraction, null
// subcarrier removal, variance scaling and phase sanitization.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "copresence/error.hpp"

namespace copresence {

using cplx = std::complex<double>;
using CsiVector = std::vector<cplx>;

enum class Band { ghz2_4, ghz5 };

struct ChannelConfig {
    std::string preset;
    Band band = Band::ghz2_4;
    int channel_number = 1;
    double bandwidth_mhz = 20.0;
    std::size_t subcarrier_count = 64;
    std::vector<std::size_t> null_indices; // sorted, unique

    std::size_t useful_count() const { return subcarrier_count - null_indices.size(); }
    double bandwidth_hz() const { return bandwidth_mhz * 1e6; }
    double time_resolution() const { return 1.0 / bandwidth_hz(); }

    double center_frequency_hz() const {
        if (band == Band::ghz2_4)
            return (2407.0 + 5.0 * channel_number) * 1e6;
        return (5000.0 + 5.0 * channel_number) * 1e6;
    }

    bool is_null(std::size_t k) const {
        return std::binary_search(null_indices.begin(), null_indices.end(), k);
    }

    void validate() const {
        if (subcarrier_count == 0)
            throw DataError("channel config '" + preset + "': subcarrier count must be positive");
        if (!(bandwidth_mhz > 0.0))
            throw DataError("channel config '" + preset + "': bandwidth must be positive");
        if (!std::is_sorted(null_indices.begin(), null_indices.end()) ||
            std::adjacent_find(null_indices.begin(), null_indices.end()) != null_indices.end())
            throw DataError("channel config '" + preset + "': null indices must be sorted and unique");
        if (!null_indices.empty() && null_indices.back() >= subcarrier_count)
            throw DataError("channel config '" + preset + "': null index out of range");
        if (useful_count() == 0)
            throw DataError("channel config '" + preset + "': no useful subcarriers");
    }

    friend bool operator==(const ChannelConfig&, const ChannelConfig&) = default;
};

// 20 MHz, 64-point FFT order: DC plus the guard band 29..35 (subcarriers
// +-29..+-32) -> 56 useful subcarriers.
inline ChannelConfig make_preset_2g4() {
    ChannelConfig c;
    c.preset = "2g4";
    c.band = Band::ghz2_4;
    c.channel_number = 1;
    c.bandwidth_mhz = 20.0;
    c.subcarrier_count = 64;
    c.null_indices = {0, 29, 30, 31, 32, 33, 34, 35};
    return c;
}

// 80 MHz as exported by the capture firmware: 255 values per frame. DC
// neighbourhood {0, 1, 254} and guard band 123..132 -> 242 useful.
inline ChannelConfig make_preset_5g() {
    ChannelConfig c;
    c.preset = "5g";
    c.band = Band::ghz5;
    c.channel_number = 157;
    c.bandwidth_mhz = 80.0;
    c.subcarrier_count = 255;
    c.null_indices = {0, 1};
    for (std::size_t k = 123; k <= 132; ++k)
        c.null_indices.push_back(k);
    c.null_indices.push_back(254);
    return c;
}

using ChannelConfigPtr = std::shared_ptr<const ChannelConfig>;

inline ChannelConfigPtr preset_config(const std::string& name) {
    static const ChannelConfigPtr p2g4 = std::make_shared<const ChannelConfig>(make_preset_2g4());
    static const ChannelConfigPtr p5g = std::make_shared<const ChannelConfig>(make_preset_5g());
    if (name == "2g4")
        return p2g4;
    if (name == "5g")
        return p5g;
    throw UsageError("unknown channel preset '" + name + "' (expected 2g4 or 5g)");
}

// Number of training epochs used for each band preset.
inline int default_epochs(const std::string& preset) {
    return preset_config(preset)->band == Band::ghz5 ? 25 : 35;
}

enum class Label : int { non_copresent = 0, copresent = 1, unlabeled = -1 };

inline const char* label_name(Label l) {
    switch (l) {
    case Label::copresent: return "copresent";
    case Label::non_copresent: return "noncopresent";
    default: return "unlabeled";
    }
}

inline Label parse_label(const std::string& s) {
    if (s == "copresent" || s == "1")
        return Label::copresent;
    if (s == "noncopresent" || s == "0")
        return Label::non_copresent;
    if (s == "unlabeled" || s == "?" || s == "-1")
        return Label::unlabeled;
    throw DataError("unknown label '" + s + "'");
}

struct CsiMeasurement {
    double timestamp = 0.0;
    std::string tx_id;
    std::string rx_id;
    ChannelConfigPtr config;
    CsiVector csi;
    Label label = Label::unlabeled;

    void validate() const {
        if (!config)
            throw DataError("measurement without channel config");
        if (csi.size() != config->subcarrier_count)
            throw DataError("measurement " + tx_id + "->" + rx_id + ": CSI length " + std::to_string(csi.size()) +
                            " does not match subcarrier count " + std::to_string(config->subcarrier_count) +
                            " of preset '" + config->preset + "'");
    }
};

struct MagnitudePhase {
    double magnitude;
    double phase; // (-pi, pi]
};

inline MagnitudePhase magnitude_phase(cplx h) {
    const double m = std::hypot(h.real(), h.imag());
    if (m == 0.0)
        return {0.0, 0.0};
    double p = std::atan2(h.imag(), h.real());
    if (p <= -std::numbers::pi)
        p = std::numbers::pi;
    return {m, p};
}

inline CsiVector strip_nulls(const CsiMeasurement& m) {
    m.validate();
    const auto& cfg = *m.config;
    CsiVector out;
    out.reserve(cfg.useful_count());
    auto null_it = cfg.null_indices.begin();
    for (std::size_t k = 0; k < m.csi.size(); ++k) {
        if (null_it != cfg.null_indices.end() && *null_it == k) {
            ++null_it;
            continue;
        }
        out.push_back(m.csi[k]);
    }
    return out;
}

// Unwrap along the subcarrier axis, then subtract the least-squares line
// over the subcarrier index. Removes timing-offset slope and constant offset.
inline std::vector<double> sanitize_phase(std::span<const double> phases) {
    const std::size_t n = phases.size();
    std::vector<double> out(phases.begin(), phases.end());
    if (n == 0)
        return out;
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t k = 1; k < n; ++k) {
        double d = out[k] - out[k - 1];
        d -= two_pi * std::round(d / two_pi);
        out[k] = out[k - 1] + d;
    }
    if (n == 1) {
        out[0] = 0.0;
        return out;
    }
    const double xm = 0.5 * static_cast<double>(n - 1);
    double ym = 0.0;
    for (double v : out)
        ym += v;
    ym /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double dx = static_cast<double>(k) - xm;
        sxy += dx * (out[k] - ym);
        sxx += dx * dx;
    }
    const double slope = sxy / sxx;
    for (std::size_t k = 0; k < n; ++k)
        out[k] -= ym + slope * (static_cast<double>(k) - xm);
    return out;
}

enum class FeatureMode { both, magnitude, phase };

inline const char* feature_mode_name(FeatureMode m) {
    switch (m) {
    case FeatureMode::magnitude: return "magnitude";
    case FeatureMode::phase: return "phase";
    default: return "both";
    }
}

inline FeatureMode parse_feature_mode(const std::string& s) {
    if (s == "both")
        return FeatureMode::both;
    if (s == "magnitude")
        return FeatureMode::magnitude;
    if (s == "phase")
        return FeatureMode::phase;
    throw DataError("unknown feature mode '" + s + "'");
}

struct FeatureOptions {
    FeatureMode mode = FeatureMode::both;
    bool sanitize_phase = false;

    friend bool operator==(const FeatureOptions&, const FeatureOptions&) = default;
};

inline std::size_t feature_dim(std::size_t useful, FeatureMode mode) {
    return mode == FeatureMode::both ? 2 * useful : useful;
}

struct NormStats {
    Eigen::VectorXd mean;
    Eigen::VectorXd stddev; // zero-variance columns stored as 1
};

struct RowOrigin {
    double timestamp = 0.0;
    std::string tx_id;
    std::string rx_id;
};

struct FeatureMatrix {
    Eigen::MatrixXd data;     // N x D, magnitudes then phases
    std::vector<int> labels;  // 1 copresent, 0 non-copresent, -1 unlabeled
    std::vector<RowOrigin> origins;
    std::optional<NormStats> norm_stats;
    std::string preset;
    FeatureOptions options;

    Eigen::Index rows() const { return data.rows(); }
    Eigen::Index cols() const { return data.cols(); }
};

// One measurement's feature row: [M_1..M_K' | phi_1..phi_K'] (or one half).
inline Eigen::VectorXd feature_row(const CsiMeasurement& m, const FeatureOptions& opt = {}) {
    const CsiVector useful = strip_nulls(m);
    const std::size_t kp = useful.size();
    std::vector<double> mag(kp), ph(kp);
    for (std::size_t k = 0; k < kp; ++k) {
        const auto mp = magnitude_phase(useful[k]);
        mag[k] = mp.magnitude;
        ph[k] = mp.phase;
    }
    if (opt.sanitize_phase)
        ph = sanitize_phase(ph);
    Eigen::VectorXd row(static_cast<Eigen::Index>(feature_dim(kp, opt.mode)));
    Eigen::Index c = 0;
    if (opt.mode != FeatureMode::phase)
        for (double v : mag)
            row(c++) = v;
    if (opt.mode != FeatureMode::magnitude)
        for (double v : ph)
            row(c++) = v;
    return row;
}

inline FeatureMatrix build_feature_matrix(std::span<const CsiMeasurement> ms, const FeatureOptions& opt = {}) {
    if (ms.empty())
        throw DataError("cannot build a feature matrix from zero measurements");
    const ChannelConfig& cfg = *ms.front().config;
    const auto d = static_cast<Eigen::Index>(feature_dim(cfg.useful_count(), opt.mode));
    FeatureMatrix fm;
    fm.preset = cfg.preset;
    fm.options = opt;
    fm.data.resize(static_cast<Eigen::Index>(ms.size()), d);
    fm.labels.reserve(ms.size());
    fm.origins.reserve(ms.size());
    for (std::size_t n = 0; n < ms.size(); ++n) {
        const auto& m = ms[n];
        if (!m.config || !(*m.config == cfg))
            throw DataError("measurement " + std::to_string(n) + " uses a different channel config than measurement 0");
        fm.data.row(static_cast<Eigen::Index>(n)) = feature_row(m, opt).transpose();
        fm.labels.push_back(static_cast<int>(m.label));
        fm.origins.push_back({m.timestamp, m.tx_id, m.rx_id});
    }
    return fm;
}

inline NormStats fit_variance_scaling(const Eigen::MatrixXd& train) {
    if (train.rows() < 2)
        throw DataError("variance scaling needs at least 2 training rows, got " + std::to_string(train.rows()));
    NormStats s;
    const double n = static_cast<double>(train.rows());
    s.mean = train.colwise().mean().transpose();
    s.stddev.resize(train.cols());
    for (Eigen::Index j = 0; j < train.cols(); ++j) {
        const double var = (train.col(j).array() - s.mean(j)).square().sum() / n;
        const double sd = std::sqrt(var);
        s.stddev(j) = sd > 0.0 ? sd : 1.0;
    }
    return s;
}

inline NormStats fit_variance_scaling(const FeatureMatrix& train) { return fit_variance_scaling(train.data); }

inline Eigen::MatrixXd apply_scaling(const Eigen::MatrixXd& x, const NormStats& stats) {
    if (x.cols() != stats.mean.size() || x.cols() != stats.stddev.size())
        throw DataError("scaling statistics cover " + std::to_string(stats.mean.size()) + " columns but data has " +
                        std::to_string(x.cols()));
    Eigen::MatrixXd out = x;
    out.rowwise() -= stats.mean.transpose();
    out.array().rowwise() /= stats.stddev.transpose().array();
    return out;
}

inline FeatureMatrix apply_scaling(const FeatureMatrix& x, const NormStats& stats) {
    FeatureMatrix out = x;
    out.data = apply_scaling(x.data, stats);
    out.norm_stats = stats;
    return out;
}

} // namespace copresence
