#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace srne {

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);
/// Strict parse of the whole string; throws std::invalid_argument.
double parse_double(std::string_view s);
std::size_t parse_size(std::string_view s);

std::string read_file(const std::filesystem::path& p);
/// Writes to a sibling temporary and renames it into place.
void write_file_atomic(const std::filesystem::path& p, std::string_view contents);

} // namespace srne
