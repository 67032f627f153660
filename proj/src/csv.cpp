#include "invdes/csv.hpp"

#include <cstdio>
#include <sstream>

namespace invdes {

std::string format_double(double v) {
    char buf[64];
    // shortest representation that round-trips a double
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        double back = 0.0;
        std::sscanf(buf, "%lf", &back);
        if (back == v) return buf;
    }
    return buf;
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : f_(path), width_(header.size()), path_(path) {
    if (!f_) throw IoError("csv: cannot open '" + path + "' for writing");
    row(header);
}

void CsvWriter::row(const std::vector<std::string>& fields) {
    if (fields.size() != width_)
        throw IoError("csv: row width " + std::to_string(fields.size()) + " != header width " +
                      std::to_string(width_) + " in '" + path_ + "'");
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) f_ << ',';
        f_ << fields[i];
    }
    f_ << '\n';
    if (!f_) throw IoError("csv: write failed for '" + path_ + "'");
}

CsvWriter::~CsvWriter() = default;

int CsvTable::column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return static_cast<int>(i);
    throw IoError("csv: missing column '" + name + "'");
}

CsvTable read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("csv: cannot open '" + path + "'");
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        if (!line.empty() && line.back() == ',') fields.push_back("");
        if (first) {
            t.header = std::move(fields);
            first = false;
        } else {
            t.rows.push_back(std::move(fields));
        }
    }
    return t;
}

}  // namespace invdes
