#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace speechconf::textio {

/// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);

/// Strict parse of the whole field; throws Error(NonFiniteValue) for
/// nan/inf and Error(InvalidArgument) for anything that is not a number.
double parse_double(std::string_view field);
long long parse_int(std::string_view field);

/// Splits one CSV line on commas. Fields may be double-quoted with "" escapes.
std::vector<std::string> split_csv_line(std::string_view line);
std::string csv_escape(std::string_view field);

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

/// Reads non-empty lines, stripping a UTF-8 BOM and trailing CR.
std::vector<std::string> read_lines(const std::filesystem::path& path);
std::string read_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);
void write_binary(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);

}  // namespace speechconf::textio
