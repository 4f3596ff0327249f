#pragma once

// Small text helpers shared by the loaders: CSV rows and number parsing.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace maple::detail {

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<std::size_t> line_numbers;  // 1-based source line of each row
};

// Unquoted comma-separated text; cells are trimmed, blank lines skipped.
CsvTable read_csv(const std::filesystem::path& path);

std::optional<double> parse_double(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace maple::detail
