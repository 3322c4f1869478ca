#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sdcnn/errors.hpp"
#include "sdcnn/gbt.hpp"
#include "sdcnn/image.hpp"
#include "sdcnn/image_io.hpp"
#include "sdcnn/resnet.hpp"

namespace sdcnn {

// Provenance-encoded column header, e.g. "src=LE;view=CC;stage=3;ch=17".
inline std::string tag_to_string(const FeatureTag& tag) {
    return std::string("src=") + to_string(tag.source) + ";view=" + to_string(tag.view) +
           ";stage=" + std::to_string(tag.stage) + ";ch=" + std::to_string(tag.channel);
}

inline FeatureTag parse_feature_tag(const std::string& s) {
    FeatureTag tag;
    std::istringstream in(s);
    std::string field;
    int seen = 0;
    while (std::getline(in, field, ';')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw DataError("bad feature tag '" + s + "'");
        const std::string key = field.substr(0, eq);
        const std::string value = field.substr(eq + 1);
        try {
            if (key == "src") {
                tag.source = source_from_string(value);
            } else if (key == "view") {
                tag.view = view_from_string(value);
            } else if (key == "stage") {
                tag.stage = std::stoi(value);
            } else if (key == "ch") {
                tag.channel = std::stoi(value);
            } else {
                throw DataError("bad feature tag '" + s + "'");
            }
        } catch (const std::logic_error&) {
            throw DataError("bad feature tag '" + s + "'");
        }
        ++seen;
    }
    if (seen != 4 || tag.stage < 1 || tag.stage > 4 || tag.channel < 0)
        throw DataError("bad feature tag '" + s + "'");
    return tag;
}

// Feature matrix with case identities, labels and per-column provenance tags.
struct FeatureTable {
    std::vector<std::string> case_ids;
    std::vector<int> labels; // 0 = benign, 1 = cancer
    FeatureMatrix matrix;
    std::vector<FeatureTag> tags;
};

namespace detail {

// shortest round-trip decimal form
inline std::string format_double(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

} // namespace detail

inline void write_feature_csv(const fs::path& path, const FeatureTable& table) {
    std::string out;
    out.reserve(table.matrix.rows * table.matrix.cols * 12 + 64);
    out += "case_id,label";
    for (const FeatureTag& tag : table.tags) {
        out += ',';
        out += tag_to_string(tag);
    }
    out += '\n';
    for (std::size_t r = 0; r < table.matrix.rows; ++r) {
        out += table.case_ids[r];
        out += ',';
        out += table.labels[r] ? "cancer" : "benign";
        for (std::size_t c = 0; c < table.matrix.cols; ++c) {
            out += ',';
            out += detail::format_double(table.matrix.at(r, c));
        }
        out += '\n';
    }
    atomic_write_text(path, out);
}

inline FeatureTable read_feature_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw IoError("'" + path.string() + "' is empty");

    FeatureTable table;
    {
        std::istringstream header(line);
        std::string cell;
        int col = 0;
        while (std::getline(header, cell, ',')) {
            if (col == 0 && cell != "case_id")
                throw IoError("'" + path.string() + "' lacks a case_id column");
            if (col == 1 && cell != "label")
                throw IoError("'" + path.string() + "' lacks a label column");
            if (col >= 2) table.tags.push_back(parse_feature_tag(cell));
            ++col;
        }
    }
    const std::size_t n_cols = table.tags.size();
    std::vector<double> values;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        if (!std::getline(row, cell, ',')) throw IoError("malformed row in '" + path.string() + "'");
        table.case_ids.push_back(cell);
        if (!std::getline(row, cell, ',')) throw IoError("malformed row in '" + path.string() + "'");
        table.labels.push_back(label_from_string(cell) == CaseLabel::Cancer ? 1 : 0);
        std::size_t count = 0;
        while (std::getline(row, cell, ',')) {
            double v = 0.0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc{})
                throw IoError("bad numeric cell '" + cell + "' in '" + path.string() + "'");
            values.push_back(v);
            ++count;
        }
        if (count != n_cols)
            throw IoError("row for case '" + table.case_ids.back() + "' has " +
                          std::to_string(count) + " values, header has " + std::to_string(n_cols));
    }
    table.matrix = FeatureMatrix(table.case_ids.size(), n_cols);
    table.matrix.values = std::move(values);
    return table;
}

// Keeps only the columns whose source is in `sources` (empty keeps all).
inline FeatureTable filter_sources(const FeatureTable& table, const std::set<SourceTag>& sources) {
    if (sources.empty()) return table;
    std::vector<std::size_t> keep;
    for (std::size_t c = 0; c < table.tags.size(); ++c)
        if (sources.count(table.tags[c].source)) keep.push_back(c);
    if (keep.empty()) throw DataError("no feature columns match the requested sources");
    FeatureTable out;
    out.case_ids = table.case_ids;
    out.labels = table.labels;
    out.matrix = FeatureMatrix(table.matrix.rows, keep.size());
    out.tags.reserve(keep.size());
    for (std::size_t c : keep) out.tags.push_back(table.tags[c]);
    for (std::size_t r = 0; r < table.matrix.rows; ++r)
        for (std::size_t j = 0; j < keep.size(); ++j)
            out.matrix.at(r, j) = table.matrix.at(r, keep[j]);
    return out;
}

} // namespace sdcnn
