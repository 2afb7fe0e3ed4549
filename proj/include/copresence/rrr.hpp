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


// Input-gradient explanations and annotation-penalised retraining: feature
// importance, the iterative multi-hypothesis loop and the hypothesis vote.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "copresence/error.hpp"
#include "copresence/eval.hpp"
#include "copresence/measurement_io.hpp"
#include "copresence/mlp.hpp"
#include "copresence/model_io.hpp"

namespace copresence {

// Binary N x D mask; a 1 marks an input gradient to suppress.
struct AnnotationMatrix {
    Eigen::MatrixXd values;

    static AnnotationMatrix column_constant(Eigen::Index n, Eigen::Index d, const std::set<Eigen::Index>& features) {
        AnnotationMatrix a;
        a.values = Eigen::MatrixXd::Zero(n, d);
        for (auto f : features) {
            if (f < 0 || f >= d)
                throw DataError("annotation feature index " + std::to_string(f) + " out of range");
            a.values.col(f).setOnes();
        }
        return a;
    }
};

inline double penalty(const AnnotationMatrix& a, const Eigen::MatrixXd& input_grads) {
    return penalty(a.values, input_grads);
}

struct RrrConfig {
    double lambda = 1000.0;
    double importance_threshold = 0.10;
    double auc_stop = 0.85;
    double instance_ratio_threshold = 0.67; // c
    int max_iterations = 10;                // penalised retrainings after the first model

    void validate() const {
        const auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
        if (!(lambda > 0.0) || !in_unit(importance_threshold) || !in_unit(auc_stop) ||
            !in_unit(instance_ratio_threshold) || max_iterations < 0)
            throw UsageError("invalid RRR configuration");
    }
};

// Per instance, |grad| divided by its largest component; a feature counts
// when the ratio reaches c. Importance is the fraction of instances counting
// it. Gradients come from a clean (dropout-free) pass.
inline Eigen::VectorXd feature_importance_from_gradients(const Eigen::MatrixXd& grads, double c = 0.67) {
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(grads.cols());
    Eigen::Index nonzero = 0;
    for (Eigen::Index n = 0; n < grads.rows(); ++n) {
        const Eigen::VectorXd mag = grads.row(n).cwiseAbs().transpose();
        const double mx = mag.maxCoeff();
        if (!(mx > 0.0))
            continue;
        ++nonzero;
        for (Eigen::Index d = 0; d < mag.size(); ++d)
            if (mag(d) / mx >= c)
                counts(d) += 1.0;
    }
    if (nonzero == 0)
        throw NumericError("feature_importance: every input gradient is zero");
    return counts / static_cast<double>(grads.rows());
}

inline Eigen::VectorXd feature_importance(const MlpModel& model, const Eigen::MatrixXd& x, double c = 0.67) {
    return feature_importance_from_gradients(input_gradients(model, x), c);
}

struct Hypothesis {
    TrainedModel model;
    std::vector<Eigen::Index> penalized; // cumulative, ascending
    double test_auc = 0.0;
    Eigen::VectorXd importance; // on the training data
};

struct HypothesisSet {
    std::vector<Hypothesis> entries;
};

// Expects variance-scaled data; `pipeline` (with its norm stats) is stored in
// every resulting model.
inline HypothesisSet rrr_iterate(const Eigen::MatrixXd& x_train, std::span<const int> y_train,
                                 const Eigen::MatrixXd& x_test, std::span<const int> y_test, const RrrConfig& cfg,
                                 const TrainConfig& train_cfg, const MlpArchitecture& arch = {},
                                 const Pipeline& pipeline = {}) {
    cfg.validate();
    if (x_train.cols() != x_test.cols())
        throw DataError("rrr_iterate: train and test feature counts differ");
    HypothesisSet set;
    std::set<Eigen::Index> penalized;
    for (int it = 0; it <= cfg.max_iterations; ++it) {
        MlpModel init = make_mlp(x_train.cols(), arch, train_cfg.rng_seed);
        TrainResult tr;
        if (penalized.empty()) {
            tr = train(std::move(init), x_train, y_train, train_cfg);
        } else {
            InputGradientPenalty pen;
            pen.lambda = cfg.lambda;
            pen.annotation = AnnotationMatrix::column_constant(1, x_train.cols(), penalized).values;
            tr = train(std::move(init), x_train, y_train, train_cfg, &pen);
        }
        Hypothesis h;
        h.model = {std::move(tr.model), pipeline};
        const Eigen::VectorXd s = predict_proba(h.model.net, x_test).col(1);
        h.test_auc = roc_auc(std::vector<double>(s.data(), s.data() + s.size()), y_test);
        h.importance = feature_importance(h.model.net, x_train, cfg.instance_ratio_threshold);
        h.penalized.assign(penalized.begin(), penalized.end());
        const double auc = h.test_auc;
        const Eigen::VectorXd importance = h.importance;
        set.entries.push_back(std::move(h));

        if (it == 0 && auc < cfg.auc_stop)
            throw DataError("rrr_iterate: degenerate run, unpenalised test AUC " + std::to_string(auc) +
                            " is already below the stopping threshold " + std::to_string(cfg.auc_stop));
        if (auc < cfg.auc_stop)
            break;
        bool grew = false;
        for (Eigen::Index d = 0; d < importance.size(); ++d)
            if (importance(d) >= cfg.importance_threshold && penalized.insert(d).second)
                grew = true;
        if (!grew)
            break;
    }
    return set;
}

struct EnsembleDecision {
    bool copresent = false;
    int votes_copresent = 0;
    int models = 0;
};

// Majority of per-model hard votes at probability 0.5; ties are
// non-copresent.
inline std::vector<EnsembleDecision> ensemble_vote(const HypothesisSet& hyps, const Eigen::MatrixXd& raw_features) {
    if (hyps.entries.empty())
        throw DataError("ensemble_vote: empty hypothesis set");
    std::vector<EnsembleDecision> out(static_cast<std::size_t>(raw_features.rows()));
    for (const auto& h : hyps.entries) {
        const Eigen::VectorXd s = score(h.model, raw_features);
        for (Eigen::Index i = 0; i < s.size(); ++i) {
            auto& d = out[static_cast<std::size_t>(i)];
            ++d.models;
            if (s(i) >= 0.5)
                ++d.votes_copresent;
        }
    }
    for (auto& d : out)
        d.copresent = 2 * d.votes_copresent > d.models;
    return out;
}

struct EnsembleGate {
    std::vector<double> aucs;
    int models_above = 0;
    bool passed = false;
};

// E.g. "at least three models must reach AUC 0.9 on the probe data".
inline EnsembleGate ensemble_gate(const HypothesisSet& hyps, const Eigen::MatrixXd& raw_features,
                                  std::span<const int> labels, double auc_threshold = 0.9, int min_models = 3) {
    if (hyps.entries.empty())
        throw DataError("ensemble_gate: empty hypothesis set");
    EnsembleGate g;
    for (const auto& h : hyps.entries) {
        const Eigen::VectorXd s = score(h.model, raw_features);
        const double auc = roc_auc(std::vector<double>(s.data(), s.data() + s.size()), labels);
        g.aucs.push_back(auc);
        if (auc > auc_threshold)
            ++g.models_above;
    }
    g.passed = g.models_above >= min_models;
    return g;
}

inline std::string importance_table(const Eigen::VectorXd& importance) {
    std::ostringstream os;
    os << "# feature importance\n";
    for (Eigen::Index d = 0; d < importance.size(); ++d)
        os << d << ' ' << io::format_double(importance(d)) << '\n';
    return os.str();
}

inline std::string hypothesis_file_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "model_%03zu.txt", i);
    return buf;
}

// Directory of model files plus manifest.txt.
inline void save_hypotheses(const std::filesystem::path& dir, const HypothesisSet& set) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec)
        throw DataError(dir.string() + ": cannot create directory");
    std::ostringstream manifest;
    manifest << "# copresence-hypotheses v1\n";
    manifest << "count=" << set.entries.size() << '\n';
    for (std::size_t i = 0; i < set.entries.size(); ++i) {
        const auto& h = set.entries[i];
        const auto file = hypothesis_file_name(i);
        save_model((dir / file).string(), h.model);
        manifest << "hypothesis." << i << ".file=" << file << '\n';
        manifest << "hypothesis." << i << ".auc=" << io::format_double(h.test_auc) << '\n';
        manifest << "hypothesis." << i << ".penalized=";
        for (std::size_t j = 0; j < h.penalized.size(); ++j)
            manifest << (j ? " " : "") << h.penalized[j];
        manifest << '\n';
        char name[32];
        std::snprintf(name, sizeof name, "importance_%03zu.txt", i);
        std::ofstream(dir / name) << importance_table(h.importance);
    }
    std::ofstream os(dir / "manifest.txt");
    os << manifest.str();
    if (!os)
        throw DataError((dir / "manifest.txt").string() + ": write failed");
}

inline HypothesisSet load_hypotheses(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.txt";
    std::ifstream is(path);
    if (!is)
        throw DataError(path.string() + ": cannot open hypothesis manifest");
    std::map<std::string, std::string> kv;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line.front() == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw DataError(path.string() + ": malformed line '" + line + "'");
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    if (!kv.contains("count"))
        throw DataError(path.string() + ": missing count");
    const auto count = static_cast<std::size_t>(io::parse_double(kv["count"], path.string()));
    HypothesisSet set;
    for (std::size_t i = 0; i < count; ++i) {
        const std::string key = "hypothesis." + std::to_string(i) + ".";
        if (!kv.contains(key + "file"))
            throw DataError(path.string() + ": missing " + key + "file");
        Hypothesis h;
        h.model = load_model((dir / kv[key + "file"]).string());
        h.test_auc = kv.contains(key + "auc") ? io::parse_double(kv[key + "auc"], path.string()) : 0.0;
        std::istringstream ps(kv[key + "penalized"]);
        Eigen::Index f;
        while (ps >> f)
            h.penalized.push_back(f);
        set.entries.push_back(std::move(h));
    }
    if (set.entries.empty())
        throw DataError(path.string() + ": hypothesis set is empty");
    return set;
}

} // namespace copresence
