#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "invdes/error.hpp"

namespace invdes {

/// Deterministic float formatting shared by every CSV artifact (shortest
/// round-trip representation, 17 significant digits cap).
std::string format_double(double v);

/// Minimal CSV writer: comma-separated, newline rows, no quoting (fields in
/// this project never contain commas).
class CsvWriter {
public:
    CsvWriter(const std::string& path, const std::vector<std::string>& header);
    void row(const std::vector<std::string>& fields);
    ~CsvWriter();

private:
    std::ofstream f_;
    std::size_t width_;
    std::string path_;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);

}  // namespace invdes
