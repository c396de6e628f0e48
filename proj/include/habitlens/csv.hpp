#pragma once

#include <fstream>
#include <istream>
#include <optional>
#include <string>
#include <vector>

namespace habitlens::csv {

/// Streaming RFC-4180-ish reader: quoted fields, doubled quotes, LF or
/// CRLF line endings. Tracks the physical line of each record start for
/// error reporting.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  /// Reads the next record; returns false at end of input.
  bool next(std::vector<std::string>& fields);

  size_t record_line() const { return record_line_; }

 private:
  std::istream& in_;
  size_t line_ = 0;
  size_t record_line_ = 0;
};

void write_row(std::ostream& out, const std::vector<std::string>& fields);

/// Opens for writing, throws std::runtime_error on failure.
std::ofstream open_out(const std::string& path);
std::ifstream open_in(const std::string& path);

}  // namespace habitlens::csv
