#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

namespace v1d3::csv {

/// Shortest decimal text that parses back to exactly `value`.
std::string format_double(double value);

std::vector<std::string> split(std::string_view line, char sep = ',');

double parse_double(std::string_view field, std::size_t line_no);
long long parse_int(std::string_view field, std::size_t line_no);

/// Line reader that skips blank lines and tracks 1-based line numbers.
class Reader {
 public:
  explicit Reader(const std::filesystem::path& path);

  /// Reads the header line and throws InputError unless it equals `expected`.
  void expect_header(const std::vector<std::string>& expected);

  /// Next non-empty record split into fields; false at end of file.
  bool next(std::vector<std::string>& fields);

  std::size_t line_number() const { return line_no_; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  std::size_t line_no_ = 0;
};

/// Opens `path` for writing and throws InputError on failure.
std::ofstream open_output(const std::filesystem::path& path);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

}  // namespace v1d3::csv
