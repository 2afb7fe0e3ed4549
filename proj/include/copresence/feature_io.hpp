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


// Feature files written by `preprocess`.
//
//   # csi-features v1 N=<N> D=<D> preset=<p> mode=<both|magnitude|phase> sanitize=<0|1>
//   <timestamp>,<tx_id>,<rx_id>,<label>,<x_1>,...,<x_D>
//
// Values are raw (unscaled); scaling is fit wherever a model is trained.

#pragma once

#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

#include "copresence/csi_core.hpp"
#include "copresence/error.hpp"
#include "copresence/measurement_io.hpp"

namespace copresence {

inline void write_features(std::ostream& os, const FeatureMatrix& fm) {
    os << "# csi-features v1 N=" << fm.rows() << " D=" << fm.cols() << " preset=" << fm.preset
       << " mode=" << feature_mode_name(fm.options.mode) << " sanitize=" << (fm.options.sanitize_phase ? 1 : 0)
       << '\n';
    for (Eigen::Index n = 0; n < fm.rows(); ++n) {
        const auto i = static_cast<std::size_t>(n);
        const RowOrigin origin = i < fm.origins.size() ? fm.origins[i] : RowOrigin{};
        os << io::format_double(origin.timestamp) << ',' << origin.tx_id << ',' << origin.rx_id << ','
           << label_name(static_cast<Label>(fm.labels[i]));
        for (Eigen::Index d = 0; d < fm.cols(); ++d)
            os << ',' << io::format_double(fm.data(n, d));
        os << '\n';
    }
}

inline void write_features(const std::string& path, const FeatureMatrix& fm) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw DataError(path + ": cannot open for writing");
    write_features(os, fm);
    if (!os)
        throw DataError(path + ": write failed");
}

inline FeatureMatrix read_features(std::istream& is, const std::string& source) {
    std::string line;
    if (!std::getline(is, line))
        throw DataError(source + ": empty feature file");
    const std::string prefix = "# csi-features v1 ";
    if (line.rfind(prefix, 0) != 0)
        throw DataError(source + ":1: missing '# csi-features v1' header");
    std::map<std::string, std::string> kv;
    std::istringstream hs(line.substr(prefix.size()));
    std::string tok;
    while (hs >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw DataError(source + ":1: malformed header field '" + tok + "'");
        kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    for (const char* key : {"N", "D", "preset", "mode", "sanitize"})
        if (!kv.contains(key))
            throw DataError(source + ":1: header lacks " + std::string(key));
    FeatureMatrix fm;
    const auto n = static_cast<Eigen::Index>(io::parse_double(kv["N"], source + ":1"));
    const auto d = static_cast<Eigen::Index>(io::parse_double(kv["D"], source + ":1"));
    fm.preset = kv["preset"];
    fm.options.mode = parse_feature_mode(kv["mode"]);
    fm.options.sanitize_phase = kv["sanitize"] == "1";
    try {
        const auto cfg = preset_config(fm.preset);
        if (feature_dim(cfg->useful_count(), fm.options.mode) != static_cast<std::size_t>(d))
            throw DataError(source + ":1: D=" + std::to_string(d) + " does not match preset '" + fm.preset + "'");
    } catch (const UsageError& e) {
        throw DataError(source + ":1: " + e.what());
    }
    fm.data.resize(n, d);
    fm.labels.reserve(static_cast<std::size_t>(n));
    fm.origins.reserve(static_cast<std::size_t>(n));
    Eigen::Index row = 0;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty() || line.front() == '#')
            continue;
        const std::string where = source + ":" + std::to_string(line_no);
        if (row >= n)
            throw DataError(where + ": more rows than the header's N=" + std::to_string(n));
        const auto fields = io::split(line, ',');
        if (fields.size() != static_cast<std::size_t>(4 + d))
            throw DataError(where + ": expected " + std::to_string(4 + d) + " fields, got " +
                            std::to_string(fields.size()));
        fm.origins.push_back({io::parse_double(fields[0], where), std::string(fields[1]), std::string(fields[2])});
        fm.labels.push_back(static_cast<int>(parse_label(std::string(fields[3]))));
        for (Eigen::Index j = 0; j < d; ++j)
            fm.data(row, j) = io::parse_double(fields[static_cast<std::size_t>(4 + j)], where);
        ++row;
    }
    if (row != n)
        throw DataError(source + ": header promises N=" + std::to_string(n) + " rows, found " + std::to_string(row));
    return fm;
}

inline FeatureMatrix read_features(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw DataError(path + ": cannot open feature file");
    return read_features(is, path);
}

} // namespace copresence
