#pragma once

// Run-directory output: CSV files with a fixed number format, their column
// schema, and content hashes for manifests.

#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace brwlab::io {

inline constexpr int kSchemaVersion = 1;

// Hex SHA-1 of "blob <size>\0<content>", as `git hash-object` prints it.
std::string git_blob_hash(std::string_view content);
std::string read_file(const std::filesystem::path& path);

// Shortest decimal that round-trips, "nan"/"inf" spelled out.
std::string format_number(double v);

struct Column {
  std::string name;
  std::string description;
};

struct CsvSchema {
  std::string file;
  std::string description;
  std::vector<Column> columns;
};

using Cell = std::variant<std::string, double, long long>;

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const CsvSchema& schema);
  void row(const std::vector<Cell>& cells);
  void close();

 private:
  std::ofstream out_;
  std::size_t width_;
  std::string name_;
};

// Writes schema.json describing every CSV of a run directory.
void write_schema(const std::filesystem::path& dir, const std::vector<CsvSchema>& schemas);

}  // namespace brwlab::io
