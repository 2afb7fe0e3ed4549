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


// copresence command-line tool.

#include <CLI11.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "copresence/copresence.hpp"

namespace cp = copresence;

namespace {

constexpr const char* kSeedEnv = "COPRESENCE_SEED";
constexpr const char* kThreadsEnv = "COPRESENCE_THREADS";

std::optional<std::uint64_t> env_uint(const char* name) {
    const char* v = std::getenv(name);
    if (!v || !*v)
        return std::nullopt;
    std::uint64_t out = 0;
    const std::string_view s(v);
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw cp::UsageError(std::string(name) + ": expected a non-negative integer, got '" + s.data() + "'");
    return out;
}

// Flag, then environment, then the given fallback.
std::uint64_t resolve_seed(const CLI::Option* flag, std::uint64_t flag_value, std::uint64_t fallback) {
    if (flag->count() > 0)
        return flag_value;
    if (const auto e = env_uint(kSeedEnv))
        return *e;
    return fallback;
}

unsigned resolve_threads(const CLI::Option* flag, unsigned flag_value) {
    if (flag->count() > 0)
        return flag_value;
    if (const auto e = env_uint(kThreadsEnv))
        return static_cast<unsigned>(*e);
    return 1;
}

void guard_output(const std::string& out, std::initializer_list<std::string> inputs) {
    namespace fs = std::filesystem;
    std::error_code ec;
    const auto o = fs::weakly_canonical(out, ec);
    for (const auto& in : inputs) {
        if (in.empty() || in == "-")
            continue;
        if (!ec && o == fs::weakly_canonical(in, ec))
            throw cp::UsageError("--out " + out + " would overwrite input " + in);
    }
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw cp::DataError(path + ": cannot open for writing");
    os << text;
    if (!os)
        throw cp::DataError(path + ": write failed");
}

void check_preset_flag(const std::string& flag) {
    try {
        cp::preset_config(flag);
    } catch (const cp::UsageError& e) {
        throw cp::UsageError(std::string("--preset: ") + e.what());
    }
}

void require_preset_flag(const std::string& flag, const std::string& actual, const std::string& source) {
    check_preset_flag(flag);
    if (flag != actual)
        throw cp::DataError("--preset " + flag + " does not match preset '" + actual + "' of " + source);
}

cp::TrainSettings settings_from(const std::string& config) {
    return config.empty() ? cp::TrainSettings{} : cp::load_train_settings(config);
}

int epochs_for(const CLI::Option* flag, int flag_value, const cp::TrainSettings& s, const std::string& preset) {
    if (flag->count() > 0)
        return flag_value;
    return s.epochs ? *s.epochs : cp::default_epochs(preset);
}

// Measurement stream from a file or standard input.
class StreamSource {
public:
    explicit StreamSource(const std::string& path) {
        if (path == "-") {
            reader_.emplace(std::cin, "<stdin>");
        } else {
            file_.open(path, std::ios::binary);
            if (!file_)
                throw cp::DataError(path + ": cannot open for reading");
            reader_.emplace(file_, path);
        }
    }
    std::optional<cp::CsiMeasurement> next() { return reader_->next(); }

private:
    std::ifstream file_;
    std::optional<cp::MeasurementReader> reader_;
};

class Output {
public:
    explicit Output(const std::string& path) {
        if (path != "-") {
            file_.open(path, std::ios::binary);
            if (!file_)
                throw cp::DataError(path + ": cannot open for writing");
        }
        path_ = path;
    }
    std::ostream& stream() { return path_ == "-" ? std::cout : file_; }
    void finish() {
        stream().flush();
        if (!stream())
            throw cp::DataError(path_ + ": write failed");
    }

private:
    std::string path_;
    std::ofstream file_;
};

// Subcommands.

struct SimulateArgs {
    std::string scenario, out;
    int frames = 0;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;
};

void run_simulate(const SimulateArgs& a) {
    guard_output(a.out, {a.scenario});
    cp::ScenarioSpec spec = cp::load_scenario(a.scenario);
    spec.rng_seed = resolve_seed(a.seed_opt, a.seed, spec.rng_seed);
    const auto ms = cp::generate_dataset(spec, a.frames);
    cp::write_measurements(a.out, ms);
    std::cout << "measurements=" << ms.size() << " preset=" << spec.preset << '\n';
}

struct PreprocessArgs {
    std::string in, preset, out;
    bool sanitize = false, magnitude_only = false, phase_only = false;
};

void run_preprocess(const PreprocessArgs& a) {
    guard_output(a.out, {a.in});
    check_preset_flag(a.preset);
    const auto ms = cp::read_measurements(a.in);
    if (ms.empty())
        throw cp::DataError(a.in + ": no measurements");
    require_preset_flag(a.preset, ms.front().config->preset, a.in);
    cp::FeatureOptions opt;
    opt.sanitize_phase = a.sanitize;
    opt.mode = a.magnitude_only ? cp::FeatureMode::magnitude
               : a.phase_only   ? cp::FeatureMode::phase
                                : cp::FeatureMode::both;
    const auto fm = cp::build_feature_matrix(ms, opt);
    cp::write_features(a.out, fm);
    std::cout << "rows=" << fm.rows() << " features=" << fm.cols() << '\n';
}

struct TrainArgs {
    std::string features, preset, config, out;
    int epochs = 0;
    std::uint64_t seed = 0;
    CLI::Option *epochs_opt = nullptr, *seed_opt = nullptr;
};

void run_train(const TrainArgs& a) {
    guard_output(a.out, {a.features, a.config});
    const auto fm = cp::read_features(a.features);
    if (!a.preset.empty())
        require_preset_flag(a.preset, fm.preset, a.features);
    const auto s = settings_from(a.config);
    cp::TrainConfig tc = s.train;
    tc.epochs = epochs_for(a.epochs_opt, a.epochs, s, fm.preset);
    tc.rng_seed = resolve_seed(a.seed_opt, a.seed, tc.rng_seed);
    const auto stats = cp::fit_variance_scaling(fm.data);
    auto net = cp::make_mlp(fm.cols(), s.architecture, tc.rng_seed);
    auto r = cp::train(std::move(net), cp::apply_scaling(fm.data, stats), fm.labels, tc);
    cp::save_model(a.out, {std::move(r.model), {fm.preset, fm.options, stats}});
    std::cout << "epochs=" << tc.epochs << " final_loss=" << cp::io::format_double(r.loss_history.back()) << '\n';
}

struct EvaluateArgs {
    std::string features, config, out, roc, plot;
    int folds = 5, epochs = 0;
    unsigned threads = 1;
    std::uint64_t seed = 123;
    CLI::Option *epochs_opt = nullptr, *seed_opt = nullptr, *threads_opt = nullptr;
};

void run_evaluate(const EvaluateArgs& a) {
    const std::string roc = a.roc.empty() ? a.out + ".roc.csv" : a.roc;
    guard_output(a.out, {a.features, a.config});
    guard_output(roc, {a.features, a.config});
    if (!a.plot.empty())
        guard_output(a.plot, {a.features, a.config});
    const auto fm = cp::read_features(a.features);
    const auto s = settings_from(a.config);
    cp::TrainConfig tc = s.train;
    tc.epochs = epochs_for(a.epochs_opt, a.epochs, s, fm.preset);
    cp::CvConfig cv;
    cv.folds = a.folds;
    cv.seed = resolve_seed(a.seed_opt, a.seed, 123);
    cv.threads = resolve_threads(a.threads_opt, a.threads);
    const auto factory = [&](const Eigen::MatrixXd& x, std::span<const int> y, int fold) {
        cp::TrainConfig fold_cfg = tc;
        fold_cfg.rng_seed = cp::fold_seed(cv.seed, fold);
        return cp::train(cp::make_mlp(x.cols(), s.architecture, fold_cfg.rng_seed), x, y, fold_cfg).model;
    };
    const auto report = cp::cross_validate(fm.data, fm.labels, cv, factory);
    write_text(a.out, cp::report_text(report));
    write_text(roc, cp::roc_points_csv(report));
    if (!a.plot.empty())
        write_text(a.plot, cp::roc_svg(report, std::filesystem::path(a.features).filename().string()));
    std::cout << "auc=" << cp::io::format_double(report.auc) << " eer=" << cp::io::format_double(report.eer) << '\n';
}

struct ExplainArgs {
    std::string features, config, out;
    double lambda = 1000.0, importance = 0.10, auc_stop = 0.85, ratio = 0.67;
    int max_iterations = 10, epochs = 0;
    std::uint64_t seed = 123;
    CLI::Option *epochs_opt = nullptr, *seed_opt = nullptr;
};

void run_explain(const ExplainArgs& a) {
    guard_output(a.out, {a.features, a.config});
    const auto fm = cp::read_features(a.features);
    const auto s = settings_from(a.config);
    cp::TrainConfig tc = s.train;
    tc.epochs = epochs_for(a.epochs_opt, a.epochs, s, fm.preset);
    const std::uint64_t seed = resolve_seed(a.seed_opt, a.seed, 123);
    tc.rng_seed = seed;
    cp::RrrConfig rc;
    rc.lambda = a.lambda;
    rc.importance_threshold = a.importance;
    rc.auc_stop = a.auc_stop;
    rc.instance_ratio_threshold = a.ratio;
    rc.max_iterations = a.max_iterations;
    rc.validate();

    const auto plan = cp::stratified_folds(fm.labels, 5, seed);
    const auto tr = plan.train_indices(0), te = plan.test_indices(0);
    const Eigen::MatrixXd x_tr = cp::select_rows(fm.data, tr);
    const auto stats = cp::fit_variance_scaling(x_tr);
    const auto set = cp::rrr_iterate(cp::apply_scaling(x_tr, stats), cp::select_labels(fm.labels, tr),
                                     cp::apply_scaling(cp::select_rows(fm.data, te), stats),
                                     cp::select_labels(fm.labels, te), rc, tc, s.architecture,
                                     {fm.preset, fm.options, stats});
    cp::save_hypotheses(a.out, set);
    write_text((std::filesystem::path(a.out) / "importance.txt").string(),
               cp::importance_table(set.entries.front().importance));
    for (std::size_t i = 0; i < set.entries.size(); ++i)
        std::cout << "hypothesis." << i << " auc=" << cp::io::format_double(set.entries[i].test_auc)
                  << " penalized=" << set.entries[i].penalized.size() << '\n';
}

struct TransferArgs {
    std::string base, features, config, out, report;
    int epochs = cp::kDefaultTransferEpochs;
    std::size_t frozen = cp::kDefaultFrozenLayers;
    std::uint64_t seed = 123;
    CLI::Option* seed_opt = nullptr;
};

void run_transfer(const TransferArgs& a) {
    const std::string report = a.report.empty() ? a.out + ".report" : a.report;
    guard_output(a.out, {a.base, a.features, a.config});
    guard_output(report, {a.base, a.features, a.config});
    const auto base = cp::load_model(a.base);
    const auto fm = cp::read_features(a.features);
    cp::TrainConfig tc = settings_from(a.config).train;
    tc.rng_seed = resolve_seed(a.seed_opt, a.seed, tc.rng_seed);
    if (a.frozen > base.net.layers.size())
        throw cp::UsageError("--frozen " + std::to_string(a.frozen) + " exceeds the " +
                             std::to_string(base.net.layers.size()) + " layers of " + a.base);
    const auto r = cp::transfer_train(base, fm, a.epochs, tc, a.frozen);
    cp::save_model(a.out, r.model);
    write_text(report, cp::transfer_report_text(r.report));
    std::cout << "flop_ratio=" << cp::io::format_double(r.report.flop_ratio) << '\n';
}

const char* decision_name(bool copresent) { return copresent ? "copresent" : "noncopresent"; }

struct PredictArgs {
    std::string model, in = "-", out = "-";
    int window = 5;
    std::size_t quorum = 3;
};

void run_predict(const PredictArgs& a) {
    guard_output(a.out, {a.model, a.in});
    const auto model = cp::load_model(a.model);
    StreamSource src(a.in);
    Output out(a.out);
    auto& os = out.stream();
    os << "# copresence-decisions v1\ntimestamp,prover,decision,votes_copresent,total\n";
    std::map<std::string, cp::DecisionWindow> windows;
    while (auto m = src.next()) {
        auto it = windows.try_emplace(m->tx_id, static_cast<double>(a.window), a.quorum).first;
        if (const auto d = it->second.push(m->timestamp, *m, model))
            os << cp::io::format_double(d->timestamp) << ',' << m->tx_id << ',' << decision_name(d->copresent) << ','
               << d->votes_copresent << ',' << d->total << '\n';
    }
    out.finish();
}

struct EnsembleArgs {
    std::string hypotheses, in = "-", out = "-";
};

void run_ensemble(const EnsembleArgs& a) {
    guard_output(a.out, {a.in});
    const auto set = cp::load_hypotheses(a.hypotheses);
    const cp::Pipeline& p = set.entries.front().model.pipeline;
    for (const auto& h : set.entries)
        if (h.model.pipeline.preset != p.preset || !(h.model.pipeline.options == p.options))
            throw cp::DataError(a.hypotheses + ": hypotheses disagree on preset or feature options");
    StreamSource src(a.in);
    Output out(a.out);
    auto& os = out.stream();
    os << "# copresence-ensemble v1\ntimestamp,prover,decision,votes_copresent,models\n";
    while (auto m = src.next()) {
        m->validate();
        if (m->config->preset != p.preset)
            throw cp::DataError("measurement preset '" + m->config->preset + "' does not match hypotheses preset '" +
                                p.preset + "'");
        const Eigen::MatrixXd row = cp::feature_row(*m, p.options).transpose();
        const auto d = cp::ensemble_vote(set, row).front();
        os << cp::io::format_double(m->timestamp) << ',' << m->tx_id << ',' << decision_name(d.copresent) << ','
           << d.votes_copresent << ',' << d.models << '\n';
    }
    out.finish();
}

struct IngestArgs {
    std::string in, mapping, out;
};

void run_ingest(const IngestArgs& a) {
    guard_output(a.out, {a.in, a.mapping});
    const auto map = cp::load_ingest_mapping(a.mapping);
    std::ifstream is(a.in, std::ios::binary);
    if (!is)
        throw cp::DataError(a.in + ": cannot open for reading");
    const auto ms = cp::ingest_csv(is, map, a.in);
    cp::write_measurements(a.out, ms);
    std::cout << "measurements=" << ms.size() << '\n';
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"CSI-based copresence detection"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* c_sim = app.add_subcommand("simulate", "Generate a CSI measurement file from a scenario");
    c_sim->add_option("--scenario", sim.scenario, "Scenario YAML file")->required()->check(CLI::ExistingFile);
    c_sim->add_option("--frames", sim.frames, "Frames per prover/verifier pair")->required()->check(CLI::PositiveNumber);
    sim.seed_opt = c_sim->add_option("--seed", sim.seed, "RNG seed (default: scenario seed)");
    c_sim->add_option("--out", sim.out, "Measurement file to write")->required();

    PreprocessArgs pre;
    auto* c_pre = app.add_subcommand("preprocess", "Turn measurements into a feature file");
    c_pre->add_option("--in", pre.in, "Measurement file")->required()->check(CLI::ExistingFile);
    c_pre->add_option("--preset", pre.preset, "Band preset (2g4 or 5g)")->required();
    c_pre->add_flag("--sanitize-phase", pre.sanitize, "Remove the linear phase trend");
    auto* mag = c_pre->add_flag("--magnitude-only", pre.magnitude_only, "Keep magnitudes only");
    auto* ph = c_pre->add_flag("--phase-only", pre.phase_only, "Keep phases only");
    mag->excludes(ph);
    c_pre->add_option("--out", pre.out, "Feature file to write")->required();

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "Train a classifier on a feature file");
    c_tr->add_option("--features", tr.features, "Feature file")->required()->check(CLI::ExistingFile);
    c_tr->add_option("--preset", tr.preset, "Expected band preset");
    tr.epochs_opt = c_tr->add_option("--epochs", tr.epochs, "Epochs (default: per band)")->check(CLI::PositiveNumber);
    tr.seed_opt = c_tr->add_option("--seed", tr.seed, "Initialisation and shuffling seed");
    c_tr->add_option("--config", tr.config, "Training config YAML")->check(CLI::ExistingFile);
    c_tr->add_option("--out", tr.out, "Model file to write")->required();

    EvaluateArgs ev;
    auto* c_ev = app.add_subcommand("evaluate", "Stratified k-fold cross-validation");
    c_ev->add_option("--features", ev.features, "Feature file")->required()->check(CLI::ExistingFile);
    c_ev->add_option("--folds", ev.folds, "Number of folds")->check(CLI::Range(2, 1000));
    ev.seed_opt = c_ev->add_option("--seed", ev.seed, "Fold assignment seed");
    ev.epochs_opt = c_ev->add_option("--epochs", ev.epochs, "Epochs (default: per band)")->check(CLI::PositiveNumber);
    ev.threads_opt = c_ev->add_option("--threads", ev.threads, "Folds trained in parallel")->check(CLI::PositiveNumber);
    c_ev->add_option("--config", ev.config, "Training config YAML")->check(CLI::ExistingFile);
    c_ev->add_option("--out", ev.out, "Report file to write")->required();
    c_ev->add_option("--roc", ev.roc, "ROC points CSV (default: <out>.roc.csv)");
    c_ev->add_option("--plot", ev.plot, "Optional SVG ROC plot");

    ExplainArgs ex;
    auto* c_ex = app.add_subcommand("explain", "Iterative input-gradient regularisation");
    c_ex->add_option("--features", ex.features, "Feature file")->required()->check(CLI::ExistingFile);
    c_ex->add_option("--lambda", ex.lambda, "Penalty weight");
    c_ex->add_option("--importance", ex.importance, "Importance threshold for penalising a feature");
    c_ex->add_option("--auc-stop", ex.auc_stop, "Stop once test AUC falls below this");
    c_ex->add_option("--ratio", ex.ratio, "Per-instance gradient ratio counted as important");
    c_ex->add_option("--max-iterations", ex.max_iterations, "Penalised retrainings");
    ex.epochs_opt = c_ex->add_option("--epochs", ex.epochs, "Epochs (default: per band)")->check(CLI::PositiveNumber);
    ex.seed_opt = c_ex->add_option("--seed", ex.seed, "Split and training seed");
    c_ex->add_option("--config", ex.config, "Training config YAML")->check(CLI::ExistingFile);
    c_ex->add_option("--out", ex.out, "Hypothesis directory to write")->required();

    TransferArgs tf;
    auto* c_tf = app.add_subcommand("transfer", "Retrain the head of a model on new data");
    c_tf->add_option("--base", tf.base, "Base model file")->required()->check(CLI::ExistingFile);
    c_tf->add_option("--features", tf.features, "Feature file of the new scenario")->required()->check(CLI::ExistingFile);
    c_tf->add_option("--epochs", tf.epochs, "Head training epochs")->check(CLI::PositiveNumber);
    c_tf->add_option("--frozen", tf.frozen, "Leading layers kept frozen");
    tf.seed_opt = c_tf->add_option("--seed", tf.seed, "Shuffling seed");
    c_tf->add_option("--config", tf.config, "Training config YAML")->check(CLI::ExistingFile);
    c_tf->add_option("--out", tf.out, "Model file to write")->required();
    c_tf->add_option("--report", tf.report, "Transfer report (default: <out>.report)");

    PredictArgs pr;
    auto* c_pr = app.add_subcommand("predict", "Windowed decisions over a measurement stream");
    c_pr->add_option("--model", pr.model, "Model file")->required()->check(CLI::ExistingFile);
    c_pr->add_option("--window", pr.window, "Window length in seconds")->check(CLI::IsMember({5, 10}));
    c_pr->add_option("--quorum", pr.quorum, "Measurements needed before deciding")->check(CLI::PositiveNumber);
    c_pr->add_option("--in", pr.in, "Measurement stream, '-' for standard input");
    c_pr->add_option("--out", pr.out, "Decision records, '-' for standard output");

    EnsembleArgs en;
    auto* c_en = app.add_subcommand("ensemble", "Majority vote of a hypothesis set per measurement");
    c_en->add_option("--hypotheses", en.hypotheses, "Hypothesis directory")->required()->check(CLI::ExistingDirectory);
    c_en->add_option("--in", en.in, "Measurement stream, '-' for standard input");
    c_en->add_option("--out", en.out, "Decision records, '-' for standard output");

    IngestArgs ing;
    auto* c_ing = app.add_subcommand("ingest", "Convert an external CSV dump to a measurement file");
    c_ing->add_option("--in", ing.in, "CSV dump")->required()->check(CLI::ExistingFile);
    c_ing->add_option("--mapping", ing.mapping, "Field mapping YAML")->required()->check(CLI::ExistingFile);
    c_ing->add_option("--out", ing.out, "Measurement file to write")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "copresence: " << e.what() << '\n';
        return static_cast<int>(cp::ErrorKind::usage);
    }

    try {
        if (c_sim->parsed())
            run_simulate(sim);
        else if (c_pre->parsed())
            run_preprocess(pre);
        else if (c_tr->parsed())
            run_train(tr);
        else if (c_ev->parsed())
            run_evaluate(ev);
        else if (c_ex->parsed())
            run_explain(ex);
        else if (c_tf->parsed())
            run_transfer(tf);
        else if (c_pr->parsed())
            run_predict(pr);
        else if (c_en->parsed())
            run_ensemble(en);
        else if (c_ing->parsed())
            run_ingest(ing);
    } catch (const cp::Error& e) {
        std::cerr << "copresence: " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const std::bad_alloc&) {
        std::cerr << "copresence: out of memory\n";
        return static_cast<int>(cp::ErrorKind::numeric);
    } catch (const std::exception& e) {
        std::cerr << "copresence: " << e.what() << '\n';
        return static_cast<int>(cp::ErrorKind::data);
    }
    return 0;
}
