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


// Line-delimited measurement files.
//
//   # csi-measurements v1 K=<K>
//   <timestamp>,<tx_id>,<rx_id>,<preset>,<label>,<re_0>,<im_0>,...,<re_K-1>,<im_K-1>
//
// Floats use the shortest round-trip decimal form, so write -> read is
// bit-exact. Also holds the adapter that maps external CSV dumps onto it.

#pragma once

#include <yaml-cpp/yaml.h>

#include <charconv>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "copresence/csi_core.hpp"
#include "copresence/error.hpp"

namespace copresence {

inline constexpr int kMeasurementFormatVersion = 1;

namespace io {

inline std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    if (!s.empty() && s.front() == '+')
        s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw DataError(where + ": malformed number '" + std::string(s) + "'");
    return v;
}

inline std::vector<std::string_view> split(std::string_view line, char delim) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(delim, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

inline std::string trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
        s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
        s.remove_suffix(1);
    return std::string(s);
}

} // namespace io

inline std::string measurement_header(std::size_t k) {
    return "# csi-measurements v" + std::to_string(kMeasurementFormatVersion) + " K=" + std::to_string(k);
}

inline std::string format_measurement(const CsiMeasurement& m) {
    m.validate();
    std::string line = io::format_double(m.timestamp);
    line += ',';
    line += m.tx_id;
    line += ',';
    line += m.rx_id;
    line += ',';
    line += m.config->preset;
    line += ',';
    line += label_name(m.label);
    for (const auto& h : m.csi) {
        line += ',';
        line += io::format_double(h.real());
        line += ',';
        line += io::format_double(h.imag());
    }
    return line;
}

inline void write_measurements(std::ostream& os, std::span<const CsiMeasurement> ms) {
    if (ms.empty())
        throw DataError("refusing to write an empty measurement file");
    const std::size_t k = ms.front().csi.size();
    os << measurement_header(k) << '\n';
    for (const auto& m : ms) {
        if (m.csi.size() != k)
            throw DataError("all measurements in one file must share K");
        os << format_measurement(m) << '\n';
    }
}

inline void write_measurements(const std::string& path, std::span<const CsiMeasurement> ms) {
    std::ofstream os(path, std::ios::binary);
    if (!os)
        throw DataError(path + ": cannot open for writing");
    write_measurements(os, ms);
    if (!os)
        throw DataError(path + ": write failed");
}

// Streaming reader; suitable for standard input.
class MeasurementReader {
public:
    MeasurementReader(std::istream& is, std::string source) : is_(is), source_(std::move(source)) {
        std::string header;
        if (!std::getline(is_, header))
            throw DataError(source_ + ": empty measurement file");
        ++line_no_;
        const std::string prefix = "# csi-measurements v";
        if (header.rfind(prefix, 0) != 0)
            throw DataError(source_ + ":1: missing '# csi-measurements' header");
        std::istringstream hs(header.substr(prefix.size()));
        int version = 0;
        std::string kfield;
        hs >> version >> kfield;
        if (version != kMeasurementFormatVersion)
            throw DataError(source_ + ":1: unsupported measurement format version " + std::to_string(version));
        if (kfield.rfind("K=", 0) != 0)
            throw DataError(source_ + ":1: header lacks K=<subcarriers>");
        k_ = static_cast<std::size_t>(io::parse_double(kfield.substr(2), source_ + ":1"));
        if (k_ == 0)
            throw DataError(source_ + ":1: K must be positive");
    }

    std::size_t subcarrier_count() const { return k_; }

    std::optional<CsiMeasurement> next() {
        std::string line;
        while (std::getline(is_, line)) {
            ++line_no_;
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            if (line.empty() || line.front() == '#')
                continue;
            return parse(line);
        }
        return std::nullopt;
    }

private:
    CsiMeasurement parse(const std::string& line) const {
        const std::string where = source_ + ":" + std::to_string(line_no_);
        const auto fields = io::split(line, ',');
        if (fields.size() != 5 + 2 * k_)
            throw DataError(where + ": expected " + std::to_string(5 + 2 * k_) + " fields, got " +
                            std::to_string(fields.size()));
        CsiMeasurement m;
        m.timestamp = io::parse_double(fields[0], where);
        m.tx_id = std::string(fields[1]);
        m.rx_id = std::string(fields[2]);
        try {
            m.config = preset_config(std::string(fields[3]));
            m.label = parse_label(std::string(fields[4]));
        } catch (const Error& e) {
            throw DataError(where + ": " + e.what());
        }
        if (m.config->subcarrier_count != k_)
            throw DataError(where + ": preset '" + m.config->preset + "' has K=" +
                            std::to_string(m.config->subcarrier_count) + " but file header says K=" +
                            std::to_string(k_));
        m.csi.resize(k_);
        for (std::size_t k = 0; k < k_; ++k)
            m.csi[k] = {io::parse_double(fields[5 + 2 * k], where), io::parse_double(fields[6 + 2 * k], where)};
        return m;
    }

    std::istream& is_;
    std::string source_;
    std::size_t k_ = 0;
    std::size_t line_no_ = 0;
};

inline std::vector<CsiMeasurement> read_measurements(std::istream& is, const std::string& source) {
    MeasurementReader reader(is, source);
    std::vector<CsiMeasurement> out;
    while (auto m = reader.next())
        out.push_back(std::move(*m));
    return out;
}

inline std::vector<CsiMeasurement> read_measurements(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw DataError(path + ": cannot open measurement file");
    return read_measurements(is, path);
}

// ------------------------------------------------------------------------
// Ingestion of external CSV dumps.
//
//   delimiter: ","
//   preset: 2g4
//   columns: { timestamp: time, tx: mac_src, rx: mac_dst, label: in_room }
//   constants: { rx: phone0 }            # used when a column is absent
//   labels: { copresent: ["1", "yes"], noncopresent: ["0", "no"] }
//   csi: { layout: interleaved, first: csi_0 }   # re,im,re,im,...
//        { layout: magnitude_phase, first: 7 }   # mag,phase,... starting at column 7
//        { layout: split, real_prefix: re_, imag_prefix: im_ }
// ------------------------------------------------------------------------

enum class CsiLayout { interleaved, magnitude_phase, split };

struct IngestMapping {
    char delimiter = ',';
    std::string preset = "2g4";
    std::map<std::string, std::string> columns;   // field -> column name
    std::map<std::string, std::string> constants; // field -> fixed value
    std::vector<std::string> copresent_values{"1", "copresent"};
    std::vector<std::string> noncopresent_values{"0", "noncopresent"};
    CsiLayout layout = CsiLayout::interleaved;
    std::string first_column; // name or zero-based index
    std::string real_prefix = "re_";
    std::string imag_prefix = "im_";
};

inline IngestMapping parse_ingest_mapping(const YAML::Node& root, const std::string& source) {
    IngestMapping m;
    try {
        if (root["delimiter"]) {
            const auto d = root["delimiter"].as<std::string>();
            if (d.size() != 1)
                throw DataError(source + ": delimiter must be one character");
            m.delimiter = d[0];
        }
        if (root["preset"])
            m.preset = root["preset"].as<std::string>();
        if (const auto c = root["columns"])
            for (const auto& kv : c)
                m.columns[kv.first.as<std::string>()] = kv.second.as<std::string>();
        if (const auto c = root["constants"])
            for (const auto& kv : c)
                m.constants[kv.first.as<std::string>()] = kv.second.as<std::string>();
        if (const auto l = root["labels"]) {
            if (l["copresent"])
                m.copresent_values = l["copresent"].as<std::vector<std::string>>();
            if (l["noncopresent"])
                m.noncopresent_values = l["noncopresent"].as<std::vector<std::string>>();
        }
        const auto csi = root["csi"];
        if (!csi)
            throw DataError(source + ": missing 'csi' section");
        const auto layout = csi["layout"] ? csi["layout"].as<std::string>() : "interleaved";
        if (layout == "interleaved")
            m.layout = CsiLayout::interleaved;
        else if (layout == "magnitude_phase")
            m.layout = CsiLayout::magnitude_phase;
        else if (layout == "split")
            m.layout = CsiLayout::split;
        else
            throw DataError(source + ": unknown csi layout '" + layout + "'");
        if (csi["first"])
            m.first_column = csi["first"].as<std::string>();
        if (csi["real_prefix"])
            m.real_prefix = csi["real_prefix"].as<std::string>();
        if (csi["imag_prefix"])
            m.imag_prefix = csi["imag_prefix"].as<std::string>();
        if (m.layout != CsiLayout::split && m.first_column.empty())
            throw DataError(source + ": csi.first is required for the " + layout + " layout");
        preset_config(m.preset);
    } catch (const YAML::Exception& e) {
        throw DataError(source + ": " + e.what());
    } catch (const UsageError& e) {
        throw DataError(source + ": " + e.what());
    }
    return m;
}

inline IngestMapping load_ingest_mapping(const std::string& path) {
    try {
        return parse_ingest_mapping(YAML::LoadFile(path), path);
    } catch (const YAML::Exception& e) {
        throw DataError(path + ": " + e.what());
    }
}

// The dump must carry a header row naming its columns.
inline std::vector<CsiMeasurement> ingest_csv(std::istream& is, const IngestMapping& map, const std::string& source) {
    const ChannelConfigPtr cfg = preset_config(map.preset);
    const std::size_t k_count = cfg->subcarrier_count;
    std::string line;
    if (!std::getline(is, line))
        throw DataError(source + ": empty dump");
    std::vector<std::string> header;
    for (auto f : io::split(line, map.delimiter))
        header.push_back(io::trim(f));
    const auto column_index = [&](const std::string& name) -> std::optional<std::size_t> {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name)
                return i;
        return std::nullopt;
    };
    const auto require_column = [&](const std::string& name) {
        auto idx = column_index(name);
        if (!idx)
            throw DataError(source + ": mapped column '" + name + "' not in header");
        return *idx;
    };
    const auto field_column = [&](const std::string& field) -> std::optional<std::size_t> {
        auto it = map.columns.find(field);
        if (it == map.columns.end())
            return std::nullopt;
        return require_column(it->second);
    };

    const auto ts_col = field_column("timestamp");
    const auto tx_col = field_column("tx");
    const auto rx_col = field_column("rx");
    const auto label_col = field_column("label");

    std::vector<std::size_t> re_cols, im_cols;
    if (map.layout == CsiLayout::split) {
        for (std::size_t k = 0; k < k_count; ++k) {
            re_cols.push_back(require_column(map.real_prefix + std::to_string(k)));
            im_cols.push_back(require_column(map.imag_prefix + std::to_string(k)));
        }
    } else {
        std::size_t first = 0;
        if (auto idx = column_index(map.first_column))
            first = *idx;
        else
            first = static_cast<std::size_t>(io::parse_double(map.first_column, source + ": csi.first"));
        if (first + 2 * k_count > header.size())
            throw DataError(source + ": header has too few columns for K=" + std::to_string(k_count));
        for (std::size_t k = 0; k < k_count; ++k) {
            re_cols.push_back(first + 2 * k);
            im_cols.push_back(first + 2 * k + 1);
        }
    }

    const auto constant = [&](const std::string& field, const std::string& fallback) {
        auto it = map.constants.find(field);
        return it == map.constants.end() ? fallback : it->second;
    };

    std::vector<CsiMeasurement> out;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (io::trim(line).empty())
            continue;
        const std::string where = source + ":" + std::to_string(line_no);
        const auto fields = io::split(line, map.delimiter);
        if (fields.size() != header.size())
            throw DataError(where + ": expected " + std::to_string(header.size()) + " fields");
        CsiMeasurement m;
        m.config = cfg;
        m.timestamp = ts_col ? io::parse_double(fields[*ts_col], where)
                             : io::parse_double(constant("timestamp", std::to_string(out.size())), where);
        m.tx_id = tx_col ? io::trim(fields[*tx_col]) : constant("tx", "tx");
        m.rx_id = rx_col ? io::trim(fields[*rx_col]) : constant("rx", "rx");
        m.label = Label::unlabeled;
        if (label_col) {
            const std::string v = io::trim(fields[*label_col]);
            if (std::find(map.copresent_values.begin(), map.copresent_values.end(), v) != map.copresent_values.end())
                m.label = Label::copresent;
            else if (std::find(map.noncopresent_values.begin(), map.noncopresent_values.end(), v) !=
                     map.noncopresent_values.end())
                m.label = Label::non_copresent;
            else
                throw DataError(where + ": label value '" + v + "' is not mapped");
        }
        m.csi.resize(k_count);
        for (std::size_t k = 0; k < k_count; ++k) {
            const double a = io::parse_double(fields[re_cols[k]], where);
            const double b = io::parse_double(fields[im_cols[k]], where);
            m.csi[k] = map.layout == CsiLayout::magnitude_phase ? std::polar(a, b) : cplx{a, b};
        }
        out.push_back(std::move(m));
    }
    return out;
}

} // namespace copresence
