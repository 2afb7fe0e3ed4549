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


// Stratified k-fold cross-validation and biometric-style metrics.
//
// A score is the copresent-class probability; a sample is accepted as
// copresent when score >= threshold. FAR = accepted negatives / negatives,
// FRR = rejected positives / positives.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "copresence/channel_sim.hpp"
#include "copresence/csi_core.hpp"
#include "copresence/error.hpp"
#include "copresence/measurement_io.hpp"
#include "copresence/mlp.hpp"

namespace copresence {

struct FoldPlan {
    int k = 5;
    std::uint64_t seed = 123;
    std::vector<int> fold_of; // length N

    std::vector<Eigen::Index> test_indices(int fold) const {
        std::vector<Eigen::Index> out;
        for (std::size_t i = 0; i < fold_of.size(); ++i)
            if (fold_of[i] == fold)
                out.push_back(static_cast<Eigen::Index>(i));
        return out;
    }

    std::vector<Eigen::Index> train_indices(int fold) const {
        std::vector<Eigen::Index> out;
        for (std::size_t i = 0; i < fold_of.size(); ++i)
            if (fold_of[i] != fold)
                out.push_back(static_cast<Eigen::Index>(i));
        return out;
    }
};

namespace detail {

inline void require_binary(std::span<const int> labels, const char* op) {
    std::size_t pos = 0, neg = 0;
    for (int l : labels) {
        if (l == 1)
            ++pos;
        else if (l == 0)
            ++neg;
        else
            throw DataError(std::string(op) + ": labels must be 0 or 1 (found " + std::to_string(l) + ")");
    }
    if (pos == 0 || neg == 0)
        throw DataError(std::string(op) + ": both classes must be present");
}

inline void require_same_size(std::span<const double> scores, std::span<const int> labels, const char* op) {
    if (scores.size() != labels.size())
        throw DataError(std::string(op) + ": score and label counts differ");
}

} // namespace detail

// Seeded shuffle, then class-wise round-robin; the cycle continues across
// classes so fold sizes differ by at most one.
inline FoldPlan stratified_folds(std::span<const int> labels, int k = 5, std::uint64_t seed = 123) {
    detail::require_binary(labels, "stratified_folds");
    if (k < 2 || labels.size() < static_cast<std::size_t>(k))
        throw DataError("stratified_folds: need k >= 2 and at least k samples");
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);

    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    plan.fold_of.assign(labels.size(), -1);
    int next = 0;
    for (int cls : {1, 0}) {
        for (std::size_t i : order) {
            if (labels[i] != cls)
                continue;
            plan.fold_of[i] = next;
            next = (next + 1) % k;
        }
    }
    return plan;
}

struct RocPoint {
    double threshold;
    double far;
    double frr;
    double tpr;
};

// Thresholds: -inf, every distinct score ascending, +inf.
inline std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
    detail::require_same_size(scores, labels, "roc_curve");
    detail::require_binary(labels, "roc_curve");
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    const double n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const double n_neg = static_cast<double>(labels.size()) - n_pos;

    std::vector<RocPoint> roc;
    constexpr double inf = std::numeric_limits<double>::infinity();
    roc.push_back({-inf, 1.0, 0.0, 1.0});
    // Counts of samples strictly below the current threshold.
    double pos_below = 0.0, neg_below = 0.0;
    std::size_t i = 0;
    while (i < idx.size()) {
        const double t = scores[idx[i]];
        const double far = (n_neg - neg_below) / n_neg;
        const double frr = pos_below / n_pos;
        roc.push_back({t, far, frr, 1.0 - frr});
        while (i < idx.size() && scores[idx[i]] == t) {
            if (labels[idx[i]] == 1)
                pos_below += 1.0;
            else
                neg_below += 1.0;
            ++i;
        }
    }
    roc.push_back({inf, 0.0, 1.0, 0.0});
    return roc;
}

// Mann-Whitney: P(score_pos > score_neg) + 0.5 P(tie).
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    detail::require_same_size(scores, labels, "roc_auc");
    detail::require_binary(labels, "roc_auc");
    const std::size_t n = scores.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores[idx[j]] == scores[idx[i]])
            ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j); // ranks i+1..j
        for (std::size_t m = i; m < j; ++m)
            if (labels[idx[m]] == 1)
                rank_sum_pos += avg_rank;
        i = j;
    }
    const double n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const double n_neg = static_cast<double>(n) - n_pos;
    return (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

struct EerResult {
    double eer;
    double threshold;
};

// Crossing of FAR and FRR over the threshold sweep, linearly interpolated
// between the bracketing thresholds when no sweep point has FAR == FRR.
inline EerResult eer_from_roc(const std::vector<RocPoint>& roc) {
    for (std::size_t i = 0; i < roc.size(); ++i) {
        const double d = roc[i].far - roc[i].frr;
        if (d == 0.0)
            return {roc[i].far, roc[i].threshold};
        if (d < 0.0) {
            const auto& a = roc[i - 1];
            const auto& b = roc[i];
            const double da = a.far - a.frr;
            const double w = da / (da - d);
            const double value = a.far + w * (b.far - a.far);
            double t;
            if (std::isinf(a.threshold))
                t = b.threshold;
            else if (std::isinf(b.threshold))
                t = a.threshold;
            else
                t = a.threshold + w * (b.threshold - a.threshold);
            return {value, t};
        }
    }
    return {roc.back().far, roc.back().threshold};
}

inline EerResult eer(std::span<const double> scores, std::span<const int> labels) {
    return eer_from_roc(roc_curve(scores, labels));
}

struct FoldMetrics {
    int fold = 0;
    std::size_t test_size = 0;
    double auc = 0.0;
    double eer = 0.0;
};

struct EvalReport {
    std::vector<RocPoint> roc; // pooled out-of-fold scores
    double auc = 0.0;
    double eer = 0.0;
    double eer_threshold = 0.0;
    std::vector<FoldMetrics> folds;
    std::vector<double> scores; // out-of-fold score per input row
    std::vector<int> labels;
};

inline EvalReport evaluate_scores(std::span<const double> scores, std::span<const int> labels) {
    EvalReport r;
    r.roc = roc_curve(scores, labels);
    r.auc = roc_auc(scores, labels);
    const auto e = eer_from_roc(r.roc);
    r.eer = e.eer;
    r.eer_threshold = e.threshold;
    r.scores.assign(scores.begin(), scores.end());
    r.labels.assign(labels.begin(), labels.end());
    return r;
}

inline std::uint64_t fold_seed(std::uint64_t seed, int fold) {
    return detail::splitmix64(seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(fold + 1)));
}

struct CvConfig {
    int folds = 5;
    std::uint64_t seed = 123;
    unsigned threads = 1;
};

// Receives variance-scaled training rows of one fold.
using ModelFactory = std::function<MlpModel(const Eigen::MatrixXd& x_train, std::span<const int> y_train, int fold)>;

inline Eigen::MatrixXd select_rows(const Eigen::MatrixXd& x, std::span<const Eigen::Index> idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
    return out;
}

inline std::vector<int> select_labels(std::span<const int> y, std::span<const Eigen::Index> idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx)
        out.push_back(y[static_cast<std::size_t>(i)]);
    return out;
}

// Per fold: fit scaling on the training rows, train, score the held-out rows.
// Aggregate metrics pool every out-of-fold score.
inline EvalReport cross_validate(const Eigen::MatrixXd& x, std::span<const int> y, const CvConfig& cfg,
                                 const ModelFactory& factory) {
    if (static_cast<Eigen::Index>(y.size()) != x.rows())
        throw DataError("cross_validate: label count does not match rows");
    const FoldPlan plan = stratified_folds(y, cfg.folds, cfg.seed);
    std::vector<double> pooled(y.size(), 0.0);
    std::vector<FoldMetrics> folds(static_cast<std::size_t>(cfg.folds));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(cfg.folds));

    const auto run_fold = [&](int f) {
        try {
            const auto tr = plan.train_indices(f);
            const auto te = plan.test_indices(f);
            const Eigen::MatrixXd x_tr_raw = select_rows(x, tr);
            const NormStats stats = fit_variance_scaling(x_tr_raw);
            const Eigen::MatrixXd x_tr = apply_scaling(x_tr_raw, stats);
            const Eigen::MatrixXd x_te = apply_scaling(select_rows(x, te), stats);
            const auto y_tr = select_labels(y, tr);
            const auto y_te = select_labels(y, te);
            const MlpModel model = factory(x_tr, y_tr, f);
            const Eigen::VectorXd s = predict_proba(model, x_te).col(1);
            std::vector<double> fold_scores(s.data(), s.data() + s.size());
            for (std::size_t i = 0; i < te.size(); ++i)
                pooled[static_cast<std::size_t>(te[i])] = fold_scores[i];
            FoldMetrics& fm = folds[static_cast<std::size_t>(f)];
            fm.fold = f;
            fm.test_size = te.size();
            fm.auc = roc_auc(fold_scores, y_te);
            fm.eer = eer(fold_scores, y_te).eer;
        } catch (...) {
            errors[static_cast<std::size_t>(f)] = std::current_exception();
        }
    };

    const unsigned threads = std::max(1u, cfg.threads);
    if (threads == 1) {
        for (int f = 0; f < cfg.folds; ++f)
            run_fold(f);
    } else {
        for (int start = 0; start < cfg.folds; start += static_cast<int>(threads)) {
            std::vector<std::thread> pool;
            for (int f = start; f < std::min(cfg.folds, start + static_cast<int>(threads)); ++f)
                pool.emplace_back(run_fold, f);
            for (auto& t : pool)
                t.join();
        }
    }
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);

    EvalReport report = evaluate_scores(pooled, y);
    report.folds = std::move(folds);
    return report;
}

// key=value records.
inline std::string report_text(const EvalReport& r) {
    std::ostringstream os;
    os << "# copresence-eval v1\n";
    os << "auc=" << io::format_double(r.auc) << '\n';
    os << "eer=" << io::format_double(r.eer) << '\n';
    os << "eer_threshold=" << io::format_double(r.eer_threshold) << '\n';
    os << "samples=" << r.labels.size() << '\n';
    os << "positives=" << std::count(r.labels.begin(), r.labels.end(), 1) << '\n';
    os << "folds=" << r.folds.size() << '\n';
    for (const auto& f : r.folds)
        os << "fold." << f.fold << ".test_size=" << f.test_size << '\n'
           << "fold." << f.fold << ".auc=" << io::format_double(f.auc) << '\n'
           << "fold." << f.fold << ".eer=" << io::format_double(f.eer) << '\n';
    return os.str();
}

inline std::string roc_points_csv(const EvalReport& r) {
    std::ostringstream os;
    os << "threshold,far,frr,tpr\n";
    for (const auto& p : r.roc)
        os << io::format_double(p.threshold) << ',' << io::format_double(p.far) << ',' << io::format_double(p.frr)
           << ',' << io::format_double(p.tpr) << '\n';
    return os.str();
}

// Minimal standalone SVG of the ROC curve (TPR over FAR).
inline std::string roc_svg(const EvalReport& r, const std::string& title = "ROC") {
    constexpr double size = 400.0, margin = 50.0;
    std::ostringstream os;
    os.precision(6);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size + 2 * margin << "\" height=\""
       << size + 2 * margin << "\">\n";
    os << "<rect x=\"" << margin << "\" y=\"" << margin << "\" width=\"" << size << "\" height=\"" << size
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << margin << "\" y1=\"" << margin + size << "\" x2=\"" << margin + size << "\" y2=\""
       << margin << "\" stroke=\"gray\" stroke-dasharray=\"4\"/>\n";
    os << "<polyline fill=\"none\" stroke=\"blue\" stroke-width=\"2\" points=\"";
    for (auto it = r.roc.rbegin(); it != r.roc.rend(); ++it)
        os << margin + it->far * size << ',' << margin + (1.0 - it->tpr) * size << ' ';
    os << "\"/>\n";
    os << "<text x=\"" << margin << "\" y=\"" << margin - 15 << "\" font-family=\"sans-serif\" font-size=\"14\">"
       << title << " (AUC " << r.auc << ", EER " << r.eer << ")</text>\n";
    os << "<text x=\"" << margin + size / 2 << "\" y=\"" << margin + size + 35
       << "\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">FAR</text>\n";
    os << "<text x=\"" << margin - 30 << "\" y=\"" << margin + size / 2
       << "\" font-family=\"sans-serif\" font-size=\"12\">TPR</text>\n";
    os << "</svg>\n";
    return os.str();
}

} // namespace copresence
