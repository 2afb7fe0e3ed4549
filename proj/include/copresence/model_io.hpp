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


// Versioned text container for models and their preprocessing pipeline.
//
//   copresence-mlp v1
//   seed <s>
//   layers <L>
//   layer <in> <out> <activation> <leaky_slope> <dropout> <trainable>
//   W <in*out values, row-major>
//   b <out values>
//   ...
//   pipeline <preset> <mode> <sanitize>        (optional)
//   norm <D>                                   (optional)
//   mean <D values>
//   std <D values>
//   end

#pragma once

#include <Eigen/Dense>

#include <charconv>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>

#include "copresence/csi_core.hpp"
#include "copresence/error.hpp"
#include "copresence/measurement_io.hpp"
#include "copresence/mlp.hpp"

namespace copresence {

inline constexpr int kModelFormatVersion = 1;

// How raw CSI becomes a model input row.
struct Pipeline {
    std::string preset = "2g4";
    FeatureOptions options;
    std::optional<NormStats> norm;
};

struct TrainedModel {
    MlpModel net;
    Pipeline pipeline;
};

namespace detail {

inline const char* activation_name(Activation a) {
    switch (a) {
    case Activation::softmax: return "softmax";
    case Activation::identity: return "identity";
    default: return "leaky_relu";
    }
}

inline Activation parse_activation(const std::string& s) {
    if (s == "leaky_relu")
        return Activation::leaky_relu;
    if (s == "softmax")
        return Activation::softmax;
    if (s == "identity")
        return Activation::identity;
    throw DataError("corrupt model payload: unknown activation '" + s + "'");
}

template <typename Derived>
void write_array(std::ostream& os, const char* tag, const Eigen::DenseBase<Derived>& a) {
    os << tag;
    for (Eigen::Index r = 0; r < a.rows(); ++r)
        for (Eigen::Index c = 0; c < a.cols(); ++c)
            os << ' ' << io::format_double(a(r, c));
    os << '\n';
}

class TokenStream {
public:
    explicit TokenStream(std::string_view text) : is_(std::string(text)) {}

    std::string word() {
        std::string w;
        if (!(is_ >> w))
            throw DataError("corrupt model payload: unexpected end of data");
        return w;
    }

    void expect(const std::string& w) {
        const auto got = word();
        if (got != w)
            throw DataError("corrupt model payload: expected '" + w + "', found '" + got + "'");
    }

    double number() { return io::parse_double(word(), "corrupt model payload"); }

    Eigen::Index count() {
        const double v = number();
        if (v < 0 || v != std::floor(v) || v > 1e9)
            throw DataError("corrupt model payload: invalid count");
        return static_cast<Eigen::Index>(v);
    }

    std::uint64_t uint64() {
        const auto w = word();
        std::uint64_t v = 0;
        auto [ptr, ec] = std::from_chars(w.data(), w.data() + w.size(), v);
        if (ec != std::errc{} || ptr != w.data() + w.size())
            throw DataError("corrupt model payload: invalid integer '" + w + "'");
        return v;
    }

    Eigen::MatrixXd matrix(const char* tag, Eigen::Index rows, Eigen::Index cols) {
        expect(tag);
        Eigen::MatrixXd m(rows, cols);
        for (Eigen::Index r = 0; r < rows; ++r)
            for (Eigen::Index c = 0; c < cols; ++c)
                m(r, c) = number();
        return m;
    }

private:
    std::istringstream is_;
};

} // namespace detail

inline std::string serialize(const MlpModel& model, const Pipeline* pipeline = nullptr) {
    model.validate();
    std::ostringstream os;
    os << "copresence-mlp v" << kModelFormatVersion << '\n';
    os << "seed " << model.seed << '\n';
    os << "layers " << model.layers.size() << '\n';
    for (const auto& layer : model.layers) {
        const auto& s = layer.spec;
        os << "layer " << s.input_dim << ' ' << s.output_dim << ' ' << detail::activation_name(s.activation) << ' '
           << io::format_double(s.leaky_slope) << ' ' << io::format_double(s.dropout_rate) << ' '
           << (s.trainable ? 1 : 0) << '\n';
        detail::write_array(os, "W", layer.weights);
        detail::write_array(os, "b", layer.bias.transpose());
    }
    if (pipeline) {
        os << "pipeline " << pipeline->preset << ' ' << feature_mode_name(pipeline->options.mode) << ' '
           << (pipeline->options.sanitize_phase ? 1 : 0) << '\n';
        if (pipeline->norm) {
            os << "norm " << pipeline->norm->mean.size() << '\n';
            detail::write_array(os, "mean", pipeline->norm->mean.transpose());
            detail::write_array(os, "std", pipeline->norm->stddev.transpose());
        }
    }
    os << "end\n";
    return os.str();
}

inline std::string serialize(const TrainedModel& m) { return serialize(m.net, &m.pipeline); }

inline TrainedModel deserialize_trained(std::string_view text) {
    detail::TokenStream ts(text);
    const auto magic = ts.word();
    if (magic != "copresence-mlp")
        throw DataError("corrupt model payload: bad magic '" + magic + "'");
    const auto version = ts.word();
    if (version != "v" + std::to_string(kModelFormatVersion))
        throw DataError("model format version mismatch: file has " + version + ", reader supports v" +
                        std::to_string(kModelFormatVersion));
    TrainedModel out;
    bool has_pipeline = false;
    ts.expect("seed");
    out.net.seed = ts.uint64();
    ts.expect("layers");
    const Eigen::Index n_layers = ts.count();
    for (Eigen::Index l = 0; l < n_layers; ++l) {
        ts.expect("layer");
        DenseLayer layer;
        layer.spec.input_dim = ts.count();
        layer.spec.output_dim = ts.count();
        layer.spec.activation = detail::parse_activation(ts.word());
        layer.spec.leaky_slope = ts.number();
        layer.spec.dropout_rate = ts.number();
        layer.spec.trainable = ts.count() != 0;
        layer.weights = ts.matrix("W", layer.spec.input_dim, layer.spec.output_dim);
        layer.bias = ts.matrix("b", 1, layer.spec.output_dim).transpose();
        out.net.layers.push_back(std::move(layer));
    }
    for (;;) {
        const auto tag = ts.word();
        if (tag == "end")
            break;
        if (tag == "pipeline") {
            has_pipeline = true;
            out.pipeline.preset = ts.word();
            out.pipeline.options.mode = parse_feature_mode(ts.word());
            out.pipeline.options.sanitize_phase = ts.count() != 0;
        } else if (tag == "norm") {
            const Eigen::Index d = ts.count();
            NormStats s;
            s.mean = ts.matrix("mean", 1, d).transpose();
            s.stddev = ts.matrix("std", 1, d).transpose();
            out.pipeline.norm = std::move(s);
        } else {
            throw DataError("corrupt model payload: unexpected section '" + tag + "'");
        }
    }
    out.net.validate();
    if (has_pipeline && out.pipeline.norm && out.pipeline.norm->mean.size() != out.net.input_dim())
        throw DataError("corrupt model payload: normalisation size does not match model input");
    return out;
}

inline MlpModel deserialize(std::string_view text) { return deserialize_trained(text).net; }

inline void save_model(const std::string& path, const TrainedModel& m) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw DataError(path + ": cannot open for writing");
    os << serialize(m);
    if (!os)
        throw DataError(path + ": write failed");
}

inline TrainedModel load_model(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw DataError(path + ": cannot open model file");
    std::stringstream ss;
    ss << is.rdbuf();
    try {
        return deserialize_trained(ss.str());
    } catch (const DataError& e) {
        throw DataError(path + ": " + e.what());
    }
}

// Raw feature rows -> copresent-class probability.
inline Eigen::VectorXd score(const TrainedModel& m, const Eigen::MatrixXd& raw_features) {
    const Eigen::MatrixXd x = m.pipeline.norm ? apply_scaling(raw_features, *m.pipeline.norm) : raw_features;
    return predict_proba(m.net, x).col(1);
}

} // namespace copresence
