#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace learnpath {

/// Shortest text that parses back to the same value.
std::string format_double(double v);
double parse_double(std::string_view s);
std::size_t parse_size(std::string_view s);

std::vector<std::string> split_csv_line(std::string_view line, char sep = ',');
std::string join_csv(std::span<const std::string> fields);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace learnpath
