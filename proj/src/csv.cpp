#include "habitlens/csv.hpp"

#include <stdexcept>

namespace habitlens::csv {

bool Reader::next(std::vector<std::string>& fields) {
  fields.clear();
  int c = in_.get();
  if (c == EOF) return false;
  if (line_ == 0) line_ = 1;
  record_line_ = line_;

  std::string field;
  bool quoted = false;
  bool at_field_start = true;
  while (true) {
    if (c == EOF) {
      fields.push_back(std::move(field));
      return true;
    }
    char ch = static_cast<char>(c);
    if (quoted) {
      if (ch == '"') {
        if (in_.peek() == '"') {
          in_.get();
          field.push_back('"');
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line_;
        field.push_back(ch);
      }
    } else if (ch == '"' && at_field_start) {
      quoted = true;
      at_field_start = false;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
      at_field_start = true;
    } else if (ch == '\n') {
      ++line_;
      break;
    } else if (ch == '\r' && in_.peek() == '\n') {
      in_.get();
      ++line_;
      break;
    } else {
      field.push_back(ch);
      at_field_start = false;
    }
    c = in_.get();
  }
  fields.push_back(std::move(field));
  return true;
}

namespace {
bool needs_quotes(const std::string& s) {
  return s.find_first_of(",\"\n\r") != std::string::npos;
}
}  // namespace

void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    const std::string& f = fields[i];
    if (needs_quotes(f)) {
      out << '"';
      for (char c : f) {
        if (c == '"') out << '"';
        out << c;
      }
      out << '"';
    } else {
      out << f;
    }
  }
  out << '\n';
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return in;
}

}  // namespace habitlens::csv
