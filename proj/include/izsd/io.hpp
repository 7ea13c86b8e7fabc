#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace izsd::io {

// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);

// Strict parse; throws DataError on trailing garbage or empty input.
double parse_double(const std::string& s);
long parse_long(const std::string& s);

std::vector<std::string> split_csv_line(const std::string& line);

std::string read_file(const std::filesystem::path& path);
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Writes to a temp file in the target directory, then renames into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

}  // namespace izsd::io
