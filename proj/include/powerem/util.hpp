#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace powerem {

using Rng = std::mt19937_64;

// Engine seeded from a base seed plus a stream label, so independent streams
// (per output key, per restart) do not depend on call order.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);
Rng make_rng(std::uint64_t seed, std::string_view stream);

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

// Stable 64-bit digest of a string (first 8 bytes of SHA-256).
std::uint64_t stable_hash(std::string_view data);

std::string read_file(const std::filesystem::path& path);
// Writes via a temporary sibling and rename, so readers never see partial files.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

// Shortest text that round-trips the double exactly (up to 17 significant digits).
std::string format_double(double value);
// Whole-string decimal parse; throws corrupt_data naming `what` on failure.
double parse_double(std::string_view text, std::string_view what = "number");

std::vector<std::string> split(std::string_view text, char sep);
std::string trim(std::string_view text);

// Minimal CSV: no quoting, comma separated, first row is the header.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const;  // throws if missing
};

CsvTable parse_csv(std::string_view text);
CsvTable read_csv(const std::filesystem::path& path);
std::string to_csv(const CsvTable& table);

} // namespace powerem
