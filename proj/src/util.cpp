#include "powerem/util.hpp"

#include "powerem/error.hpp"
#include "powerem/parallel.hpp"

#include <omp.h>
#include <openssl/evp.h>

#include <array>
#include <charconv>
#include <fstream>
#include <sstream>

namespace powerem {

int exit_code(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::validation_failed: return 2;
        case ErrorCode::numerical_failure: return 4;
        default: return 3;
    }
}

const char* to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::invalid_input: return "invalid input";
        case ErrorCode::validation_failed: return "validation failed";
        case ErrorCode::numerical_failure: return "numerical failure";
        case ErrorCode::not_found: return "not found";
        case ErrorCode::corrupt_data: return "corrupt data";
        case ErrorCode::version_mismatch: return "version mismatch";
    }
    return "error";
}

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    return Rng(seq);
}

Rng make_rng(std::uint64_t seed, std::string_view stream) {
    return make_rng(seed, stable_hash(stream));
}

std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
        fail(ErrorCode::numerical_failure, "sha256 digest failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xf]);
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) {
    return sha256_hex(read_file(path));
}

std::uint64_t stable_hash(std::string_view data) {
    const std::string hex = sha256_hex(data);
    std::uint64_t value = 0;
    std::from_chars(hex.data(), hex.data() + 16, value, 16);
    return value;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::not_found, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::invalid_input, "cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) fail(ErrorCode::invalid_input, "write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string format_double(double value) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc()) fail(ErrorCode::numerical_failure, "cannot format double");
    return std::string(buf.data(), end);
}

double parse_double(std::string_view text, std::string_view what) {
    double value = 0.0;
    const char* first = text.data();
    const char* last = text.data() + text.size();
    auto [end, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || end != last || text.empty())
        fail(ErrorCode::corrupt_data, "cannot parse " + std::string(what) + " from '" + std::string(text) + "'");
    return value;
}

int max_threads() {
    return omp_get_max_threads();
}

void set_max_threads(int n) {
    if (n > 0) omp_set_num_threads(n);
}

std::vector<std::string> split(std::string_view text, char sep) {
    std::vector<std::string> parts;
    std::size_t start = 0;
    while (true) {
        auto pos = text.find(sep, start);
        if (pos == std::string_view::npos) {
            parts.emplace_back(text.substr(start));
            return parts;
        }
        parts.emplace_back(text.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string trim(std::string_view text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = text.find_last_not_of(" \t\r\n");
    return std::string(text.substr(first, last - first + 1));
}

std::size_t CsvTable::column(std::string_view name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
        if (header[i] == name) return i;
    fail(ErrorCode::invalid_input, "missing CSV column '" + std::string(name) + "'");
}

CsvTable parse_csv(std::string_view text) {
    CsvTable table;
    bool first = true;
    for (auto& raw : split(text, '\n')) {
        auto line = trim(raw);
        if (line.empty()) continue;
        auto cells = split(line, ',');
        for (auto& c : cells) c = trim(c);
        if (first) {
            table.header = std::move(cells);
            first = false;
            continue;
        }
        if (cells.size() != table.header.size())
            fail(ErrorCode::corrupt_data, "CSV row has " + std::to_string(cells.size()) +
                                              " cells, header has " +
                                              std::to_string(table.header.size()));
        table.rows.push_back(std::move(cells));
    }
    return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
    return parse_csv(read_file(path));
}

std::string to_csv(const CsvTable& table) {
    std::string out;
    auto emit = [&out](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out.push_back(',');
            out += cells[i];
        }
        out.push_back('\n');
    };
    emit(table.header);
    for (const auto& row : table.rows) emit(row);
    return out;
}

} // namespace powerem
