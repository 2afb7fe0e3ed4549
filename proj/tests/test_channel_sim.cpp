// SPDX-License-Identifier: Apache-2.0

#include <catch2/catch_amalgamated.hpp>

#include <numbers>
#include <random>
#include <sstream>

#include "copresence/channel_sim.hpp"
#include "copresence/measurement_io.hpp"
#include "copresence/scenario_config.hpp"
#include "test_support.hpp"

using namespace copresence;
using Catch::Approx;

namespace {

// Reference DFT evaluated straight from the definition, no twiddle table.
CsiVector naive_dft(const std::vector<cplx>& c) {
    const auto k_count = c.size();
    CsiVector h(k_count);
    for (std::size_t k = 0; k < k_count; ++k) {
        cplx acc = 0.0;
        for (std::size_t n = 0; n < k_count; ++n)
            acc += c[n] * std::exp(cplx(0.0, -2.0 * std::numbers::pi * double(k) * double(n) / double(k_count)));
        h[k] = acc;
    }
    return h;
}

std::vector<cplx> random_complex(std::size_t k, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    std::vector<cplx> v(k);
    for (auto& x : v)
        x = {g(rng), g(rng)};
    return v;
}

double total_power(const std::vector<PathTap>& taps) {
    double p = 0.0;
    for (const auto& t : taps)
        p += t.amplitude * t.amplitude;
    return p;
}

ChannelConfig plain_config(std::size_t k, double bw_mhz = 20.0) {
    ChannelConfig c;
    c.preset = "test";
    c.subcarrier_count = k;
    c.bandwidth_mhz = bw_mhz;
    return c;
}

} // namespace

TEST_CASE("single path at 3 m gives one free-space tap at 10 ns", "[channel_sim]") {
    ScenarioSpec s;
    s.rooms = {{"a", {0, 0, 0}, {10, 10, 3}}};
    s.devices = {{"tx", {1, 1, 1}, false, {}}, {"rx", {4, 1, 1}, true, {}}};
    s.reflections = false;
    s.min_scatter_paths = s.max_scatter_paths = 0;
    const auto taps = ideal_cir(s, "tx", "rx");
    REQUIRE(taps.size() == 1);
    CHECK(taps[0].delay == Approx(3.0 / kSpeedOfLight).epsilon(1e-12));
    CHECK(taps[0].delay == Approx(10e-9).epsilon(1e-3));
    const double wavelength = kSpeedOfLight / s.carrier();
    CHECK(taps[0].amplitude == Approx(wavelength / (4.0 * std::numbers::pi * 3.0)).epsilon(1e-12));
}

TEST_CASE("ideal CIR is deterministic and ordered", "[channel_sim]") {
    const auto s = testing::counting_spec();
    const auto a = ideal_cir(s, "a1", "v");
    const auto b = ideal_cir(s, "a1", "v");
    REQUIRE(a.size() == b.size());
    REQUIRE(a.size() >= 2);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].amplitude == b[i].amplitude);
        CHECK(a[i].phase == b[i].phase);
        CHECK(a[i].delay == b[i].delay);
    }
    const double los = (s.device("a1").position - s.device("v").position).norm() / kSpeedOfLight;
    CHECK(a[0].delay == Approx(los).epsilon(1e-12));
    for (std::size_t i = 1; i < a.size(); ++i) {
        CHECK(a[i].delay > a[0].delay);
        CHECK(a[i].delay >= a[i - 1].delay);
        CHECK(a[i].amplitude < a[0].amplitude);
        CHECK(a[i].amplitude >= 0.0);
    }
}

TEST_CASE("through-wall pair carries less power than a copresent pair at equal distance", "[channel_sim]") {
    auto s = testing::two_room_spec();
    s.min_scatter_paths = s.max_scatter_paths = 0;
    const auto near = ideal_cir(s, "near", "v");
    const auto far = ideal_cir(s, "far", "v");
    CHECK(total_power(far) < total_power(near));
    // Equal geometry on the direct path: the ratio is exactly the wall factor.
    CHECK(far[0].amplitude * far[0].amplitude / (near[0].amplitude * near[0].amplitude) ==
          Approx(std::pow(10.0, -1.2)).epsilon(1e-12));
}

TEST_CASE("ideal CIR rejects unknown or identical devices", "[channel_sim]") {
    const auto s = testing::two_room_spec();
    CHECK_THROWS_AS(ideal_cir(s, "nope", "v"), DataError);
    CHECK_THROWS_AS(ideal_cir(s, "v", "v"), DataError);
}

TEST_CASE("on-grid delays sample without leakage", "[channel_sim]") {
    const auto cfg = plain_config(16);
    const double dt = cfg.time_resolution();
    const std::vector<PathTap> one{{1.0, 0.0, 2.0 * dt}};
    const auto cir = sample_cir(one, cfg);
    REQUIRE(cir.taps.size() == 16);
    CHECK(cir.time_resolution == Approx(1.0 / cir.bandwidth));
    for (std::size_t n = 0; n < 16; ++n)
        CHECK(std::abs(cir.taps[n] - (n == 2 ? cplx(1.0) : cplx(0.0))) < 1e-12);

    const std::vector<PathTap> several{{0.5, 0.3, 0.0}, {0.25, -1.0, 3.0 * dt}, {0.1, 2.0, 7.0 * dt}};
    const auto c2 = sample_cir(several, cfg);
    for (std::size_t n = 0; n < 16; ++n) {
        cplx expect = 0.0;
        for (const auto& t : several)
            if (std::abs(t.delay / dt - double(n)) < 1e-9)
                expect += t.coefficient();
        CHECK(std::abs(c2.taps[n] - expect) < 1e-12);
    }
}

TEST_CASE("half-sample delay leaks symmetrically", "[channel_sim]") {
    const auto cfg = plain_config(8);
    const std::vector<PathTap> tap{{1.0, 0.0, 1.5 * cfg.time_resolution()}};
    const auto cir = sample_cir(tap, cfg);
    for (const auto& c : cir.taps)
        CHECK(std::abs(c) > 0.0);
    CHECK(std::abs(cir.taps[1]) == std::abs(cir.taps[2]));
    // sinc(+-0.5) = 2 / pi
    CHECK(std::abs(cir.taps[1]) == Approx(2.0 / std::numbers::pi).epsilon(1e-12));
}

TEST_CASE("no taps sample to zeros", "[channel_sim]") {
    const auto cir = sample_cir({}, plain_config(4));
    for (const auto& c : cir.taps)
        CHECK(c == cplx(0.0));
}

TEST_CASE("DFT of an impulse and a shifted impulse", "[channel_sim]") {
    SampledCir impulse;
    impulse.taps = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
    for (const auto& h : cir_to_csi(impulse))
        CHECK(std::abs(h - cplx(1.0)) < 1e-15);

    SampledCir shifted;
    shifted.taps = {0.0, 1.0, 0.0, 0.0};
    const auto h = cir_to_csi(shifted);
    const CsiVector expect{{1, 0}, {0, -1}, {-1, 0}, {0, 1}};
    for (std::size_t k = 0; k < 4; ++k)
        CHECK(std::abs(h[k] - expect[k]) < 1e-15);
}

TEST_CASE("DFT matches the definition and is bijective", "[channel_sim][property]") {
    const std::size_t k = GENERATE(4, 8, 64, 255, 256);
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SampledCir cir;
        cir.taps = random_complex(k, seed * 31 + k);
        const auto h = cir_to_csi(cir);
        const auto ref = naive_dft(cir.taps);
        double err = 0.0, energy_h = 0.0, energy_c = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            err = std::max(err, std::abs(h[i] - ref[i]));
            energy_h += std::norm(h[i]);
            energy_c += std::norm(cir.taps[i]);
        }
        CHECK(err < 1e-9 * double(k));
        CHECK(energy_h == Approx(double(k) * energy_c).epsilon(1e-10));
        const auto back = csi_to_cir(h);
        double rt = 0.0;
        for (std::size_t i = 0; i < k; ++i)
            rt = std::max(rt, std::abs(back.taps[i] - cir.taps[i]));
        CHECK(rt < 1e-9);
    }
}

TEST_CASE("dataset counts and labels follow room membership", "[channel_sim]") {
    const auto s = testing::counting_spec();
    const auto ds = generate_dataset(s, 10);
    CHECK(ds.size() == 110);
    std::size_t copresent = 0;
    for (const auto& m : ds) {
        CHECK(m.rx_id == "v");
        CHECK(m.csi.size() == 64);
        if (m.label == Label::copresent) {
            ++copresent;
            CHECK(m.tx_id.front() == 'a');
        }
    }
    CHECK(copresent == 30);
}

TEST_CASE("dataset generation is byte-identical for a fixed seed", "[channel_sim]") {
    auto s = testing::counting_spec();
    s.random_phase_offset = true;
    s.timing_offset_s = 5e-9;
    std::ostringstream a, b, c;
    write_measurements(a, generate_dataset(s, 4));
    write_measurements(b, generate_dataset(s, 4));
    CHECK(a.str() == b.str());
    s.rng_seed += 1;
    write_measurements(c, generate_dataset(s, 4));
    CHECK(a.str() != c.str());
}

TEST_CASE("AGC hides transmit power", "[channel_sim]") {
    auto s = testing::two_room_spec();
    s.devices.pop_back();
    s.agc_enabled = true;
    const auto mean_magnitude = [](const ScenarioSpec& spec, std::uint64_t seed) {
        ScenarioSpec copy = spec;
        copy.rng_seed = seed;
        double total = 0.0;
        std::size_t count = 0;
        for (const auto& m : generate_dataset(copy, 1000))
            for (std::size_t k = 0; k < m.csi.size(); ++k)
                if (!m.config->is_null(k)) {
                    total += std::abs(m.csi[k]);
                    ++count;
                }
        return total / double(count);
    };
    const double low = mean_magnitude(s, 5);
    s.tx_power_scale = 10.0;
    const double high = mean_magnitude(s, 5);
    CHECK(high == Approx(low).epsilon(0.02));

    s.agc_enabled = false;
    s.noise_std = 0.0;
    s.tx_power_scale = 1.0;
    const double raw_low = mean_magnitude(s, 5);
    s.tx_power_scale = 10.0;
    const double raw_high = mean_magnitude(s, 5);
    CHECK(raw_high / raw_low == Approx(10.0).epsilon(1e-9));
}

TEST_CASE("dataset generation validates its inputs", "[channel_sim]") {
    auto s = testing::counting_spec();
    CHECK_THROWS_AS(generate_dataset(s, 0), DataError);
    for (auto& d : s.devices)
        d.verifier = false;
    CHECK_THROWS_AS(generate_dataset(s, 1), DataError);
    ScenarioSpec empty;
    CHECK_THROWS_AS(generate_dataset(empty, 1), DataError);
    auto outside = testing::two_room_spec();
    outside.devices[1].position = {50, 50, 1};
    CHECK_THROWS_AS(generate_dataset(outside, 1), DataError);
}

TEST_CASE("scenario files parse and reject typos", "[channel_sim][config]") {
    const auto s = parse_scenario_string(R"(
name: tiny
preset: 5g
seed: 9
propagation: { reflections: false, scatter_paths: [0, 0], wall_attenuation_db: 6 }
impairments: { noise_std: 0.01, random_phase_offset: true }
receiver: { agc: false }
rooms:
  - { name: r1, min: [0, 0, 0], max: [4, 4, 3] }
devices:
  - { id: v, position: [1, 1, 1], verifier: true }
  - { id: p, position: [3, 3, 1], tx_power_scale: 10 }
)");
    CHECK(s.name == "tiny");
    CHECK(s.preset == "5g");
    CHECK(s.rng_seed == 9);
    CHECK_FALSE(s.reflections);
    CHECK(s.wall_attenuation_db == 6.0);
    CHECK(s.random_phase_offset);
    CHECK_FALSE(s.agc_enabled);
    CHECK(s.devices[1].tx_power_scale.value() == 10.0);
    CHECK(s.tx_power_scale == 1.0);
    CHECK(s.carrier() == Approx(5.785e9));

    CHECK_THROWS_AS(parse_scenario_string("name: x\nbogus: 1\nrooms: []\n"), DataError);
    CHECK_THROWS_AS(parse_scenario_string("rooms:\n  - { name: r, min: [0,0,0], max: [1,1,1] }\n"
                                          "devices:\n  - { id: d, position: [5,5,5] }\n"),
                    DataError);
}

TEST_CASE("bundled scenarios load", "[channel_sim][config]") {
    for (const char* name : {"office.yaml", "car.yaml", "complex.yaml", "power.yaml"}) {
        INFO(name);
        const auto s = load_scenario(testing::data_path(std::string("scenarios/") + name));
        CHECK_FALSE(s.devices.empty());
    }
}
