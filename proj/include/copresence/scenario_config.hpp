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


// Human-editable scenario files (YAML, nested sections).
//
//   name: office
//   preset: 2g4
//   seed: 7
//   tx_power_scale: 1.0
//   frame_rate: 3
//   propagation: { reflections: true, reflection_coefficient: 0.6,
//                  scatter_paths: [2, 6], scatter_coefficient: 0.5,
//                  wall_attenuation_db: 12, path_floor: 0 }
//   impairments: { noise_std: 0.02, tap_jitter: 0.02, delay_jitter_s: 1e-10,
//                  phase_jitter: 0.02, random_phase_offset: false,
//                  timing_offset_s: 0 }
//   receiver: { agc: true }
//   rooms:   [ { name: a, min: [0, 0, 0], max: [5, 4, 3] } ]
//   devices: [ { id: v1, position: [1, 1, 1], verifier: true } ]

#pragma once

#include <yaml-cpp/yaml.h>

#include <set>
#include <string>

#include "copresence/channel_sim.hpp"
#include "copresence/error.hpp"

namespace copresence {

namespace detail {

inline void check_keys(const YAML::Node& node, const std::set<std::string>& allowed, const std::string& where) {
    if (!node.IsMap())
        throw DataError(where + ": expected a mapping");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!allowed.contains(key))
            throw DataError(where + ": unknown key '" + key + "'");
    }
}

inline Vec3 read_vec3(const YAML::Node& n, const std::string& where) {
    if (!n.IsSequence() || n.size() != 3)
        throw DataError(where + ": expected [x, y, z]");
    return {n[0].as<double>(), n[1].as<double>(), n[2].as<double>()};
}

template <typename T>
void read_opt(const YAML::Node& n, const char* key, T& out) {
    if (n[key])
        out = n[key].as<T>();
}

} // namespace detail

inline ScenarioSpec parse_scenario(const YAML::Node& root, const std::string& source = "<scenario>") {
    using detail::check_keys;
    using detail::read_opt;
    ScenarioSpec s;
    try {
        check_keys(root,
                   {"name", "preset", "seed", "tx_power_scale", "frame_rate", "propagation", "impairments", "receiver",
                    "rooms", "devices"},
                   source);
        read_opt(root, "name", s.name);
        read_opt(root, "preset", s.preset);
        read_opt(root, "seed", s.rng_seed);
        read_opt(root, "tx_power_scale", s.tx_power_scale);
        read_opt(root, "frame_rate", s.frame_rate);

        if (const auto p = root["propagation"]) {
            check_keys(p,
                       {"carrier_hz", "reflections", "reflection_coefficient", "scatter_paths", "scatter_coefficient",
                        "wall_attenuation_db", "path_floor"},
                       source + ": propagation");
            if (p["carrier_hz"])
                s.carrier_hz = p["carrier_hz"].as<double>();
            read_opt(p, "reflections", s.reflections);
            read_opt(p, "reflection_coefficient", s.reflection_coefficient);
            read_opt(p, "scatter_coefficient", s.scatter_coefficient);
            read_opt(p, "wall_attenuation_db", s.wall_attenuation_db);
            read_opt(p, "path_floor", s.path_floor);
            if (const auto sp = p["scatter_paths"]) {
                if (!sp.IsSequence() || sp.size() != 2)
                    throw DataError(source + ": propagation.scatter_paths must be [min, max]");
                s.min_scatter_paths = sp[0].as<int>();
                s.max_scatter_paths = sp[1].as<int>();
            }
        }
        if (const auto i = root["impairments"]) {
            check_keys(i,
                       {"noise_std", "tap_jitter", "delay_jitter_s", "phase_jitter", "random_phase_offset",
                        "timing_offset_s"},
                       source + ": impairments");
            read_opt(i, "noise_std", s.noise_std);
            read_opt(i, "tap_jitter", s.tap_jitter);
            read_opt(i, "delay_jitter_s", s.delay_jitter_s);
            read_opt(i, "phase_jitter", s.phase_jitter);
            read_opt(i, "random_phase_offset", s.random_phase_offset);
            read_opt(i, "timing_offset_s", s.timing_offset_s);
        }
        if (const auto r = root["receiver"]) {
            check_keys(r, {"agc"}, source + ": receiver");
            read_opt(r, "agc", s.agc_enabled);
        }
        if (const auto rooms = root["rooms"]) {
            for (const auto& rn : rooms) {
                check_keys(rn, {"name", "min", "max"}, source + ": room");
                Room room;
                room.name = rn["name"].as<std::string>();
                room.min = detail::read_vec3(rn["min"], source + ": room " + room.name + ".min");
                room.max = detail::read_vec3(rn["max"], source + ": room " + room.name + ".max");
                s.rooms.push_back(room);
            }
        }
        if (const auto devices = root["devices"]) {
            for (const auto& dn : devices) {
                check_keys(dn, {"id", "position", "verifier", "tx_power_scale"}, source + ": device");
                Device d;
                d.id = dn["id"].as<std::string>();
                d.position = detail::read_vec3(dn["position"], source + ": device " + d.id + ".position");
                read_opt(dn, "verifier", d.verifier);
                if (dn["tx_power_scale"])
                    d.tx_power_scale = dn["tx_power_scale"].as<double>();
                s.devices.push_back(d);
            }
        }
    } catch (const YAML::Exception& e) {
        throw DataError(source + ": " + e.what());
    }
    s.validate();
    return s;
}

inline ScenarioSpec load_scenario(const std::string& path) {
    YAML::Node root;
    try {
        root = YAML::LoadFile(path);
    } catch (const YAML::Exception& e) {
        throw DataError(path + ": " + e.what());
    }
    return parse_scenario(root, path);
}

inline ScenarioSpec parse_scenario_string(const std::string& text) {
    try {
        return parse_scenario(YAML::Load(text));
    } catch (const YAML::Exception& e) {
        throw DataError(std::string("<scenario>: ") + e.what());
    }
}

} // namespace copresence
