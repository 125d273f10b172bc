#include "brwlab/io.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include <boost/uuid/detail/sha1.hpp>
#include "json.hpp"

namespace brwlab::io {

std::string git_blob_hash(std::string_view content) {
  boost::uuids::detail::sha1 h;
  const std::string header = "blob " + std::to_string(content.size());
  h.process_bytes(header.data(), header.size() + 1);  // includes the terminating NUL
  h.process_bytes(content.data(), content.size());
  boost::uuids::detail::sha1::digest_type digest;
  h.get_digest(digest);
  char buf[41];
  for (int i = 0; i < 5; ++i) std::snprintf(buf + 8 * i, 9, "%08x", digest[i]);
  return std::string(buf, 40);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

CsvWriter::CsvWriter(const std::filesystem::path& path, const CsvSchema& schema)
    : out_(path, std::ios::binary), width_(schema.columns.size()), name_(schema.file) {
  if (!out_) throw std::runtime_error("cannot write '" + path.string() + "'");
  for (std::size_t i = 0; i < width_; ++i) out_ << (i ? "," : "") << schema.columns[i].name;
  out_ << '\n';
}

void CsvWriter::row(const std::vector<Cell>& cells) {
  if (cells.size() != width_) throw std::logic_error(name_ + ": row width does not match the schema");
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    std::visit(
        [&](const auto& v) {
          using T = std::decay_t<decltype(v)>;
          if constexpr (std::is_same_v<T, double>) out_ << format_number(v);
          else out_ << v;
        },
        cells[i]);
  }
  out_ << '\n';
}

void CsvWriter::close() {
  out_.close();
  if (!out_) throw std::runtime_error(name_ + ": write failed");
}

void write_schema(const std::filesystem::path& dir, const std::vector<CsvSchema>& schemas) {
  nlohmann::ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["files"] = nlohmann::ordered_json::array();
  for (const auto& s : schemas) {
    nlohmann::ordered_json f;
    f["file"] = s.file;
    f["description"] = s.description;
    f["columns"] = nlohmann::ordered_json::array();
    for (const auto& c : s.columns) f["columns"].push_back({{"name", c.name}, {"description", c.description}});
    j["files"].push_back(f);
  }
  std::ofstream out(dir / "schema.json", std::ios::binary);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write schema.json");
}

}  // namespace brwlab::io
