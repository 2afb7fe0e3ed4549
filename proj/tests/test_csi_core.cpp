// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <random>

#include "copresence/channel_sim.hpp"
#include "copresence/csi_core.hpp"
#include "test_support.hpp"

using namespace copresence;
using Catch::Approx;

namespace {

CsiMeasurement unit_measurement(const std::string& preset) {
    CsiMeasurement m;
    m.config = preset_config(preset);
    m.tx_id = "a";
    m.rx_id = "b";
    m.csi.assign(m.config->subcarrier_count, cplx{1.0, 0.0});
    return m;
}

// Residual of an ordinary least-squares line fit, solved via normal equations.
std::vector<double> ls_residual(const std::vector<double>& y) {
    const auto n = static_cast<Eigen::Index>(y.size());
    Eigen::MatrixXd a(n, 2);
    Eigen::VectorXd b(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        a(k, 0) = 1.0;
        a(k, 1) = static_cast<double>(k);
        b(k) = y[static_cast<std::size_t>(k)];
    }
    const Eigen::Vector2d coef = (a.transpose() * a).ldlt().solve(a.transpose() * b);
    const Eigen::VectorXd r = b - a * coef;
    return {r.data(), r.data() + r.size()};
}

} // namespace

TEST_CASE("magnitude_phase examples", "[csi_core]") {
    auto mp = magnitude_phase({3.0, 4.0});
    CHECK(mp.magnitude == 5.0);
    CHECK(mp.phase == Approx(0.9272952180016122).epsilon(1e-15));

    mp = magnitude_phase({-1.0, 0.0});
    CHECK(mp.magnitude == 1.0);
    CHECK(mp.phase == std::numbers::pi);

    mp = magnitude_phase({-1.0, -0.0});
    CHECK(mp.phase == std::numbers::pi);

    mp = magnitude_phase({0.0, 0.0});
    CHECK(mp.magnitude == 0.0);
    CHECK(mp.phase == 0.0);

    mp = magnitude_phase({0.0, -2.0});
    CHECK(mp.phase == Approx(-std::numbers::pi / 2));
}

TEST_CASE("magnitude_phase reconstructs the complex value", "[csi_core][property]") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> g(0.0, 3.0);
    for (int i = 0; i < 10000; ++i) {
        const cplx h{g(rng), g(rng)};
        const auto mp = magnitude_phase(h);
        CHECK(mp.phase > -std::numbers::pi);
        CHECK(mp.phase <= std::numbers::pi);
        CHECK(std::abs(std::polar(mp.magnitude, mp.phase) - h) < 1e-9);
    }
}

TEST_CASE("strip_nulls keeps useful subcarriers in order", "[csi_core]") {
    SECTION("2.4 GHz preset") {
        auto m = unit_measurement("2g4");
        CHECK(m.csi.size() == 64);
        CHECK(m.config->null_indices.size() == 8);
        CHECK(strip_nulls(m).size() == 56);
    }
    SECTION("5 GHz preset") {
        auto m = unit_measurement("5g");
        CHECK(m.csi.size() == 255);
        CHECK(m.config->null_indices.size() == 13);
        CHECK(strip_nulls(m).size() == 242);
    }
    SECTION("order preserved") {
        auto m = unit_measurement("2g4");
        for (std::size_t k = 0; k < m.csi.size(); ++k)
            m.csi[k] = cplx(static_cast<double>(k), 0.0);
        const auto u = strip_nulls(m);
        std::vector<double> expected;
        for (std::size_t k = 0; k < 64; ++k)
            if (!m.config->is_null(k))
                expected.push_back(static_cast<double>(k));
        REQUIRE(u.size() == expected.size());
        for (std::size_t i = 0; i < u.size(); ++i)
            CHECK(u[i].real() == expected[i]);
    }
    SECTION("empty null set is identity") {
        auto cfg = std::make_shared<ChannelConfig>();
        cfg->preset = "flat";
        cfg->subcarrier_count = 8;
        cfg->bandwidth_mhz = 20.0;
        CsiMeasurement m;
        m.config = cfg;
        for (int k = 0; k < 8; ++k)
            m.csi.push_back({double(k), -double(k)});
        CHECK(strip_nulls(m) == m.csi);
    }
    SECTION("length mismatch rejected") {
        auto m = unit_measurement("2g4");
        m.csi.pop_back();
        CHECK_THROWS_AS(strip_nulls(m), DataError);
    }
}

TEST_CASE("preset configuration and lookup", "[csi_core]") {
    CHECK(preset_config("2g4")->useful_count() == 56);
    CHECK(preset_config("5g")->useful_count() == 242);
    CHECK(preset_config("2g4")->bandwidth_hz() == 20e6);
    CHECK(preset_config("5g")->bandwidth_hz() == 80e6);
    CHECK_THROWS_AS(preset_config("6g"), UsageError);
    CHECK(default_epochs("2g4") == 35);
    CHECK(default_epochs("5g") == 25);
}

TEST_CASE("feature matrix dimensions follow the preset", "[csi_core]") {
    for (const auto& [preset, d] : {std::pair{"2g4", 112}, std::pair{"5g", 484}}) {
        std::vector<CsiMeasurement> ms(10, unit_measurement(preset));
        const auto fm = build_feature_matrix(ms);
        CHECK(fm.rows() == 10);
        CHECK(fm.cols() == d);
        CHECK(fm.labels.size() == 10);
        FeatureOptions mag{FeatureMode::magnitude, false};
        CHECK(build_feature_matrix(ms, mag).cols() == d / 2);
        FeatureOptions ph{FeatureMode::phase, true};
        CHECK(build_feature_matrix(ms, ph).cols() == d / 2);
    }
}

TEST_CASE("simulated datasets produce 112 and 484 features", "[csi_core]") {
    auto spec = testing::two_room_spec();
    for (const auto& [preset, d] : {std::pair{"2g4", 112}, std::pair{"5g", 484}}) {
        spec.preset = preset;
        const auto ms = generate_dataset(spec, 3);
        const auto fm = build_feature_matrix(ms);
        CHECK(fm.rows() == static_cast<Eigen::Index>(ms.size()));
        CHECK(fm.cols() == d);
    }
}

TEST_CASE("unit CSI gives unit magnitudes and zero phases", "[csi_core]") {
    const std::vector<CsiMeasurement> ms{unit_measurement("2g4")};
    const auto fm = build_feature_matrix(ms);
    CHECK((fm.data.leftCols(56).array() == 1.0).all());
    CHECK((fm.data.rightCols(56).array() == 0.0).all());
}

TEST_CASE("feature rows keep input order and labels", "[csi_core]") {
    std::vector<CsiMeasurement> ms;
    for (int i = 0; i < 7; ++i) {
        auto m = unit_measurement("2g4");
        m.csi[1] = cplx(double(i + 2), 0.0);
        m.timestamp = double(i);
        m.label = i % 2 ? Label::copresent : Label::non_copresent;
        ms.push_back(m);
    }
    ms[6].label = Label::unlabeled;
    const auto fm = build_feature_matrix(ms);
    for (int i = 0; i < 7; ++i) {
        CHECK(fm.data(i, 0) == double(i + 2));
        CHECK(fm.origins[std::size_t(i)].timestamp == double(i));
    }
    CHECK(fm.labels == std::vector<int>{0, 1, 0, 1, 0, 1, -1});
}

TEST_CASE("feature matrix errors", "[csi_core]") {
    CHECK_THROWS_AS(build_feature_matrix(std::vector<CsiMeasurement>{}), DataError);
    std::vector<CsiMeasurement> mixed{unit_measurement("2g4"), unit_measurement("5g")};
    CHECK_THROWS_AS(build_feature_matrix(mixed), DataError);
}

TEST_CASE("variance scaling examples", "[csi_core]") {
    Eigen::MatrixXd x(2, 1);
    x << 1, 3;
    auto s = fit_variance_scaling(x);
    CHECK(s.mean(0) == 2.0);
    CHECK(s.stddev(0) == 1.0);
    auto y = apply_scaling(x, s);
    CHECK(y(0, 0) == -1.0);
    CHECK(y(1, 0) == 1.0);

    Eigen::MatrixXd c = Eigen::MatrixXd::Constant(3, 1, 5.0);
    s = fit_variance_scaling(c);
    CHECK(s.stddev(0) == 1.0);
    CHECK(apply_scaling(c, s).isZero(0.0));

    Eigen::MatrixXd one(1, 1);
    one << 4;
    NormStats st{Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Constant(1, 2.0)};
    CHECK(apply_scaling(one, st)(0, 0) == 1.0);

    const Eigen::MatrixXd r = testing::random_matrix(5, 3, 9);
    NormStats ident{Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3)};
    CHECK(apply_scaling(r, ident) == r);
}

TEST_CASE("variance scaling errors", "[csi_core]") {
    CHECK_THROWS_AS(fit_variance_scaling(Eigen::MatrixXd(1, 3)), DataError);
    const auto s = fit_variance_scaling(testing::random_matrix(4, 3, 1));
    CHECK_THROWS_AS(apply_scaling(testing::random_matrix(4, 2, 1), s), DataError);
}

TEST_CASE("scaled training columns have zero mean and unit std", "[csi_core][property]") {
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        Eigen::MatrixXd x = testing::random_matrix(100, 4, seed, 3.0);
        x.col(1).array() += 50.0;
        x.col(3).setConstant(-2.0);
        const auto s = fit_variance_scaling(x);
        const Eigen::MatrixXd y = apply_scaling(x, s);
        for (Eigen::Index j = 0; j < 4; ++j) {
            const double mean = y.col(j).mean();
            CHECK(std::abs(mean) < 1e-9);
            if (j == 3)
                continue;
            const double sd = std::sqrt((y.col(j).array() - mean).square().mean());
            CHECK(std::abs(sd - 1.0) < 1e-6);
        }
        CHECK(y.col(3).isZero(0.0));
    }
}

TEST_CASE("FeatureMatrix scaling records the statistics", "[csi_core]") {
    auto spec = testing::two_room_spec();
    const auto fm = build_feature_matrix(generate_dataset(spec, 5));
    const auto stats = fit_variance_scaling(fm);
    const auto scaled = apply_scaling(fm, stats);
    REQUIRE(scaled.norm_stats.has_value());
    CHECK(scaled.norm_stats->mean == stats.mean);
    CHECK(scaled.labels == fm.labels);
}

TEST_CASE("sanitize_phase removes linear phase", "[csi_core]") {
    std::vector<double> p(56);
    for (std::size_t k = 0; k < p.size(); ++k)
        p[k] = std::remainder(0.3 * double(k) + 0.7, 2.0 * std::numbers::pi);
    for (double v : sanitize_phase(p))
        CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("sanitize_phase keeps ripple around the fitted line", "[csi_core]") {
    for (double slope : {-0.9, -0.2, 0.05, 0.4, 1.1}) {
        std::vector<double> unwrapped(56), wrapped(56);
        for (std::size_t k = 0; k < unwrapped.size(); ++k) {
            unwrapped[k] = slope * double(k) - 1.3 + 0.25 * std::sin(0.37 * double(k));
            wrapped[k] = std::remainder(unwrapped[k], 2.0 * std::numbers::pi);
        }
        const auto got = sanitize_phase(wrapped);
        const auto expected = ls_residual(unwrapped);
        for (std::size_t k = 0; k < got.size(); ++k)
            CHECK(std::abs(got[k] - expected[k]) < 1e-9);
    }
}

TEST_CASE("sanitize_phase is idempotent on sanitized input", "[csi_core][property]") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> p(242);
        for (auto& v : p)
            v = u(rng);
        const auto once = sanitize_phase(p);
        const auto twice = sanitize_phase(once);
        for (std::size_t k = 0; k < p.size(); ++k)
            CHECK(std::abs(once[k] - twice[k]) < 1e-9);
    }
}

TEST_CASE("sanitize_phase edge lengths", "[csi_core]") {
    CHECK(sanitize_phase(std::vector<double>{}).empty());
    CHECK(sanitize_phase(std::vector<double>{2.0}) == std::vector<double>{0.0});
    const auto two = sanitize_phase(std::vector<double>{1.0, 2.0});
    CHECK(std::abs(two[0]) < 1e-15);
    CHECK(std::abs(two[1]) < 1e-15);
}

TEST_CASE("label and feature mode names round trip", "[csi_core]") {
    for (Label l : {Label::copresent, Label::non_copresent, Label::unlabeled})
        CHECK(parse_label(label_name(l)) == l);
    CHECK(parse_label("1") == Label::copresent);
    CHECK(parse_label("0") == Label::non_copresent);
    CHECK_THROWS_AS(parse_label("maybe"), DataError);
    for (FeatureMode m : {FeatureMode::both, FeatureMode::magnitude, FeatureMode::phase})
        CHECK(parse_feature_mode(feature_mode_name(m)) == m);
    CHECK_THROWS_AS(parse_feature_mode("amplitude"), DataError);
}
