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


// Synthetic multipath channels: geometric CIR generation, band-limited
// sampling, the CIR <-> CSI DFT pair and seeded dataset generation.

#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "copresence/csi_core.hpp"
#include "copresence/error.hpp"

namespace copresence {

inline constexpr double kSpeedOfLight = 299792458.0;

struct PathTap {
    double amplitude = 0.0; // >= 0
    double phase = 0.0;     // radians
    double delay = 0.0;     // seconds, >= 0

    cplx coefficient() const { return std::polar(amplitude, phase); }
};

struct SampledCir {
    std::vector<cplx> taps;
    double time_resolution = 0.0; // 1 / bandwidth
    double bandwidth = 0.0;       // Hz
};

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    double norm() const { return std::sqrt(x * x + y * y + z * z); }
};

struct Room {
    std::string name;
    Vec3 min;
    Vec3 max;

    bool contains(const Vec3& p) const {
        return p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z && p.z <= max.z;
    }
};

struct Device {
    std::string id;
    Vec3 position;
    bool verifier = false;
    std::optional<double> tx_power_scale; // overrides the scenario value
};

struct ScenarioSpec {
    std::string name = "scenario";
    std::string preset = "2g4";
    std::vector<Room> rooms;
    std::vector<Device> devices;

    // Geometry and propagation.
    std::optional<double> carrier_hz; // default: preset centre frequency
    bool reflections = true;          // first-order image sources off room walls
    double reflection_coefficient = 0.6;
    int min_scatter_paths = 2; // random scatter taps per tx-rx pair
    int max_scatter_paths = 6;
    double scatter_coefficient = 0.5;
    double wall_attenuation_db = 12.0;
    // Taps whose received amplitude (after power scaling) falls below this are
    // not observed. Zero keeps every tap.
    double path_floor = 0.0;

    // Per-frame impairments.
    double noise_std = 0.02; // per-subcarrier complex Gaussian std
    double tap_jitter = 0.02;     // relative amplitude jitter
    double delay_jitter_s = 0.1e-9;
    double phase_jitter = 0.02;   // radians
    bool random_phase_offset = false;
    double timing_offset_s = 0.0; // uniform per-frame delay offset in [0, value]

    bool agc_enabled = true;
    double tx_power_scale = 1.0;
    double frame_rate = 3.0; // frames per second per prover
    std::uint64_t rng_seed = 123;

    const Device& device(const std::string& id) const {
        for (const auto& d : devices)
            if (d.id == id)
                return d;
        throw DataError("unknown device id '" + id + "' in scenario '" + name + "'");
    }

    std::size_t room_index(const Device& d) const {
        std::optional<std::size_t> found;
        for (std::size_t r = 0; r < rooms.size(); ++r) {
            if (rooms[r].contains(d.position)) {
                if (found)
                    throw DataError("device '" + d.id + "' lies in more than one room");
                found = r;
            }
        }
        if (!found)
            throw DataError("device '" + d.id + "' lies outside every room");
        return *found;
    }

    bool copresent(const std::string& a, const std::string& b) const {
        return room_index(device(a)) == room_index(device(b));
    }

    double carrier() const { return carrier_hz.value_or(preset_config(preset)->center_frequency_hz()); }

    void validate() const {
        if (rooms.empty() || devices.empty())
            throw DataError("scenario '" + name + "' has no rooms or no devices");
        for (std::size_t i = 0; i < devices.size(); ++i) {
            room_index(devices[i]);
            for (std::size_t j = i + 1; j < devices.size(); ++j)
                if (devices[i].id == devices[j].id)
                    throw DataError("duplicate device id '" + devices[i].id + "'");
            if (devices[i].tx_power_scale && !(*devices[i].tx_power_scale > 0.0))
                throw DataError("device '" + devices[i].id + "': tx_power_scale must be positive");
        }
        if (!(tx_power_scale > 0.0))
            throw DataError("scenario '" + name + "': tx_power_scale must be positive");
        if (min_scatter_paths < 0 || max_scatter_paths < min_scatter_paths)
            throw DataError("scenario '" + name + "': invalid scatter path range");
        if (!(frame_rate > 0.0) || noise_std < 0.0)
            throw DataError("scenario '" + name + "': frame_rate must be positive and noise_std non-negative");
        preset_config(preset);
    }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_string(std::uint64_t h, const std::string& s) {
    for (unsigned char c : s)
        h = splitmix64(h ^ c);
    return splitmix64(h ^ s.size());
}

inline double wrap_phase(double p) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    p = std::fmod(p, two_pi);
    if (p <= -std::numbers::pi)
        p += two_pi;
    else if (p > std::numbers::pi)
        p -= two_pi;
    return p;
}

inline double sampling_kernel(double x) {
    if (x == 0.0)
        return 1.0;
    const double px = std::numbers::pi * x;
    return std::sin(px) / px;
}

// exp(-j 2 pi m / K) for m = 0..K-1.
inline std::vector<cplx> twiddles(std::size_t k) {
    std::vector<cplx> w(k);
    for (std::size_t m = 0; m < k; ++m) {
        const double a = -2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(k);
        w[m] = {std::cos(a), std::sin(a)};
    }
    return w;
}

} // namespace detail

// Direct path, first-order wall reflections of the rooms holding tx and rx,
// plus seeded scatter taps. Sorted by delay.
inline std::vector<PathTap> ideal_cir(const ScenarioSpec& spec, const std::string& tx, const std::string& rx) {
    const Device& dt = spec.device(tx);
    const Device& dr = spec.device(rx);
    if (tx == rx)
        throw DataError("ideal_cir: transmitter and receiver are the same device '" + tx + "'");
    const std::size_t room_t = spec.room_index(dt);
    const std::size_t room_r = spec.room_index(dr);

    const double f = spec.carrier();
    const double wavelength = kSpeedOfLight / f;
    const auto free_space = [&](double length) { return wavelength / (4.0 * std::numbers::pi * length); };
    const auto propagation_phase = [&](double length) {
        return detail::wrap_phase(-2.0 * std::numbers::pi * f * length / kSpeedOfLight);
    };

    const double direct = (dt.position - dr.position).norm();
    if (!(direct > 0.0))
        throw DataError("ideal_cir: devices '" + tx + "' and '" + rx + "' share a position");

    std::vector<PathTap> taps;
    taps.push_back({free_space(direct), propagation_phase(direct), direct / kSpeedOfLight});

    if (spec.reflections) {
        std::vector<std::size_t> rooms{room_r};
        if (room_t != room_r)
            rooms.push_back(room_t);
        for (std::size_t r : rooms) {
            const Room& room = spec.rooms[r];
            const double planes[3][2] = {{room.min.x, room.max.x}, {room.min.y, room.max.y}, {room.min.z, room.max.z}};
            for (int axis = 0; axis < 3; ++axis) {
                for (double plane : planes[axis]) {
                    Vec3 image = dt.position;
                    double* coord = axis == 0 ? &image.x : axis == 1 ? &image.y : &image.z;
                    *coord = 2.0 * plane - *coord;
                    const double length = (image - dr.position).norm();
                    if (!(length > direct))
                        continue;
                    taps.push_back({spec.reflection_coefficient * free_space(length),
                                    detail::wrap_phase(propagation_phase(length) + std::numbers::pi),
                                    length / kSpeedOfLight});
                }
            }
        }
    }

    if (spec.max_scatter_paths > 0) {
        std::uint64_t h = detail::splitmix64(spec.rng_seed ^ 0x5ca77e5ULL);
        h = detail::hash_string(detail::hash_string(h, tx), rx);
        std::mt19937_64 rng(h);
        std::uniform_int_distribution<int> count_dist(spec.min_scatter_paths, spec.max_scatter_paths);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::uniform_real_distribution<double> phase_dist(-std::numbers::pi, std::numbers::pi);
        const int count = count_dist(rng);
        for (int s = 0; s < count; ++s) {
            const Room& room = spec.rooms[(s % 2 == 0) ? room_r : room_t];
            const Vec3 p{room.min.x + unit(rng) * (room.max.x - room.min.x),
                         room.min.y + unit(rng) * (room.max.y - room.min.y),
                         room.min.z + unit(rng) * (room.max.z - room.min.z)};
            const double scatter_phase = phase_dist(rng);
            const double length = (p - dt.position).norm() + (p - dr.position).norm();
            if (!(length > direct))
                continue;
            taps.push_back({spec.scatter_coefficient * free_space(length),
                            detail::wrap_phase(propagation_phase(length) + scatter_phase), length / kSpeedOfLight});
        }
    }

    if (room_t != room_r) {
        const double wall = std::pow(10.0, -spec.wall_attenuation_db / 20.0);
        for (auto& t : taps)
            t.amplitude *= wall;
    }

    std::stable_sort(taps.begin(), taps.end(), [](const PathTap& a, const PathTap& b) { return a.delay < b.delay; });
    return taps;
}

// c[n] = sum_i c_i * sinc(n - tau_i / dtau), n = 0..K-1.
inline SampledCir sample_cir(std::span<const PathTap> taps, const ChannelConfig& config) {
    if (config.subcarrier_count == 0 || !(config.bandwidth_mhz > 0.0))
        throw DataError("sample_cir: channel config needs K >= 1 and positive bandwidth");
    SampledCir cir;
    cir.bandwidth = config.bandwidth_hz();
    cir.time_resolution = 1.0 / cir.bandwidth;
    cir.taps.assign(config.subcarrier_count, cplx{0.0, 0.0});
    for (const auto& tap : taps) {
        const cplx c = tap.coefficient();
        const double offset = tap.delay / cir.time_resolution;
        for (std::size_t n = 0; n < cir.taps.size(); ++n)
            cir.taps[n] += c * detail::sampling_kernel(static_cast<double>(n) - offset);
    }
    return cir;
}

// H_k = sum_n c_n exp(-j 2 pi k n / K); no 1/K on the forward pass.
inline CsiVector cir_to_csi(const SampledCir& cir) {
    const std::size_t k_count = cir.taps.size();
    const auto w = detail::twiddles(k_count);
    CsiVector h(k_count, cplx{0.0, 0.0});
    for (std::size_t k = 0; k < k_count; ++k) {
        cplx acc{0.0, 0.0};
        for (std::size_t n = 0; n < k_count; ++n)
            acc += cir.taps[n] * w[(k * n) % k_count];
        h[k] = acc;
    }
    return h;
}

inline SampledCir csi_to_cir(std::span<const cplx> csi, double bandwidth = 0.0) {
    const std::size_t k_count = csi.size();
    const auto w = detail::twiddles(k_count);
    SampledCir cir;
    cir.bandwidth = bandwidth;
    cir.time_resolution = bandwidth > 0.0 ? 1.0 / bandwidth : 0.0;
    cir.taps.assign(k_count, cplx{0.0, 0.0});
    const double scale = 1.0 / static_cast<double>(k_count);
    for (std::size_t n = 0; n < k_count; ++n) {
        cplx acc{0.0, 0.0};
        for (std::size_t k = 0; k < k_count; ++k)
            acc += csi[k] * std::conj(w[(k * n) % k_count]);
        cir.taps[n] = acc * scale;
    }
    return cir;
}

// One verifier round per verifier device; every other device acts as a
// prover. Each (verifier, prover) pair draws from its own RNG stream.
inline std::vector<CsiMeasurement> generate_dataset(const ScenarioSpec& spec, int frames_per_pair) {
    if (frames_per_pair < 1)
        throw DataError("generate_dataset: frames_per_pair must be >= 1");
    spec.validate();
    const ChannelConfigPtr config = preset_config(spec.preset);

    std::vector<const Device*> verifiers;
    for (const auto& d : spec.devices)
        if (d.verifier)
            verifiers.push_back(&d);
    if (verifiers.empty())
        throw DataError("scenario '" + spec.name + "' has no verifier device");

    std::vector<CsiMeasurement> out;
    const double round_duration = static_cast<double>(frames_per_pair) / spec.frame_rate;
    const double noise_component = spec.noise_std / std::numbers::sqrt2;

    for (std::size_t vi = 0; vi < verifiers.size(); ++vi) {
        const Device& verifier = *verifiers[vi];
        for (const auto& prover : spec.devices) {
            if (prover.id == verifier.id)
                continue;
            const auto base = ideal_cir(spec, prover.id, verifier.id);
            const Label label = spec.copresent(prover.id, verifier.id) ? Label::copresent : Label::non_copresent;
            const double power = prover.tx_power_scale.value_or(spec.tx_power_scale);

            std::uint64_t h = detail::splitmix64(spec.rng_seed);
            h = detail::hash_string(detail::hash_string(h, verifier.id), prover.id);
            std::mt19937_64 rng(h);
            std::normal_distribution<double> gauss(0.0, 1.0);
            std::uniform_real_distribution<double> unit(0.0, 1.0);

            for (int f = 0; f < frames_per_pair; ++f) {
                std::vector<PathTap> taps;
                taps.reserve(base.size());
                const double timing = spec.timing_offset_s > 0.0 ? unit(rng) * spec.timing_offset_s : 0.0;
                for (const auto& b : base) {
                    PathTap t = b;
                    t.amplitude = std::max(0.0, t.amplitude * (1.0 + spec.tap_jitter * gauss(rng))) * power;
                    t.delay = std::max(0.0, t.delay + spec.delay_jitter_s * gauss(rng)) + timing;
                    t.phase = detail::wrap_phase(t.phase + spec.phase_jitter * gauss(rng));
                    if (t.amplitude >= spec.path_floor)
                        taps.push_back(t);
                }
                std::stable_sort(taps.begin(), taps.end(),
                                 [](const PathTap& a, const PathTap& b) { return a.delay < b.delay; });

                CsiVector csi = cir_to_csi(sample_cir(taps, *config));
                if (spec.random_phase_offset) {
                    const cplx rot = std::polar(1.0, (2.0 * unit(rng) - 1.0) * std::numbers::pi);
                    for (auto& v : csi)
                        v *= rot;
                }
                for (std::size_t k : config->null_indices)
                    csi[k] = 0.0;
                if (spec.agc_enabled) {
                    double mean = 0.0;
                    for (std::size_t k = 0; k < csi.size(); ++k)
                        if (!config->is_null(k))
                            mean += std::abs(csi[k]);
                    mean /= static_cast<double>(config->useful_count());
                    if (mean > 0.0)
                        for (auto& v : csi)
                            v /= mean;
                }
                for (auto& v : csi)
                    v += cplx{noise_component * gauss(rng), noise_component * gauss(rng)};

                CsiMeasurement m;
                m.timestamp = static_cast<double>(vi) * round_duration + static_cast<double>(f) / spec.frame_rate;
                m.tx_id = prover.id;
                m.rx_id = verifier.id;
                m.config = config;
                m.csi = std::move(csi);
                m.label = label;
                out.push_back(std::move(m));
            }
        }
    }
    return out;
}

} // namespace copresence
