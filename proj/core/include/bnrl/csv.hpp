#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace bnrl::csv {

/// Minimal RFC-4180-style CSV: fields containing commas, quotes, or newlines
/// are quoted, inner quotes doubled.
std::string escape_field(const std::string& field);
std::vector<std::string> split_line(const std::string& line);

void write_rows(const std::filesystem::path& path,
                const std::vector<std::string>& header,
                const std::vector<std::vector<std::string>>& rows);
std::vector<std::vector<std::string>> read_rows(
    const std::filesystem::path& path);

}  // namespace bnrl::csv
