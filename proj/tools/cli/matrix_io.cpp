#include "matrix_io.hpp"

#include <unistd.h>

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "eot/error.hpp"
#include "eot/experiments.hpp"

namespace eot::cli {

namespace {

[[noreturn]] void fail_at(const std::string& source, int line, int column, const std::string& what) {
  throw PreconditionError(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": " +
                          what);
}

bool is_blank(char ch) { return ch == ' ' || ch == '\t' || ch == '\r'; }

Matrix from_rows(const std::vector<std::vector<double>>& rows, const std::string& source) {
  if (rows.empty()) throw PreconditionError(source + ": no numbers found");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) {
      m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    }
  }
  return m;
}

}  // namespace

Matrix parse_csv_matrix(const std::string& text, const std::string& source) {
  std::vector<std::vector<double>> rows;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t first = 0;
    while (first < line.size() && is_blank(line[first])) ++first;
    if (first == line.size() || line[first] == '#') continue;

    std::vector<double> row;
    std::size_t pos = 0;
    while (true) {
      std::size_t begin = pos;
      while (begin < line.size() && is_blank(line[begin])) ++begin;
      std::size_t end = line.find(',', begin);
      if (end == std::string::npos) end = line.size();
      std::size_t stop = end;
      while (stop > begin && is_blank(line[stop - 1])) --stop;
      const int column = static_cast<int>(begin) + 1;
      if (stop == begin) fail_at(source, line_no, column, "empty field");
      double value = 0.0;
      const char* b = line.data() + begin;
      const char* e = line.data() + stop;
      if (*b == '+') ++b;  // from_chars rejects a leading plus
      const auto res = std::from_chars(b, e, value);
      if (res.ec != std::errc() || res.ptr != e) {
        fail_at(source, line_no, column,
                "not a number: \"" + line.substr(begin, stop - begin) + "\"");
      }
      if (!std::isfinite(value)) fail_at(source, line_no, column, "value is not finite");
      row.push_back(value);
      if (end == line.size()) break;
      pos = end + 1;
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      fail_at(source, line_no, 1,
              "expected " + std::to_string(rows.front().size()) + " fields, found " +
                  std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  return from_rows(rows, source);
}

Matrix parse_json_matrix(const std::string& text, const std::string& source) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    int line = 1;
    int column = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    fail_at(source, line, column, "malformed JSON");
  }
  auto number = [&](const nlohmann::json& v) {
    if (!v.is_number()) throw PreconditionError(source + ": every entry must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw PreconditionError(source + ": value is not finite");
    return x;
  };
  if (!j.is_array() || j.empty()) throw PreconditionError(source + ": expected a nonempty array");
  std::vector<std::vector<double>> rows;
  if (!j.front().is_array()) {
    rows.emplace_back();
    for (const auto& v : j) rows.back().push_back(number(v));
  } else {
    for (const auto& r : j) {
      if (!r.is_array()) throw PreconditionError(source + ": expected an array of rows");
      std::vector<double> row;
      for (const auto& v : r) row.push_back(number(v));
      if (!rows.empty() && row.size() != rows.front().size()) {
        throw PreconditionError(source + ": row " + std::to_string(rows.size()) + " has " +
                                std::to_string(row.size()) + " entries, expected " +
                                std::to_string(rows.front().size()));
      }
      rows.push_back(std::move(row));
    }
  }
  if (rows.front().empty()) throw PreconditionError(source + ": empty row");
  return from_rows(rows, source);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PreconditionError(path + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

Matrix read_matrix_file(const std::string& path) {
  const std::string text = read_text_file(path);
  if (std::filesystem::path(path).extension() == ".json") return parse_json_matrix(text, path);
  return parse_csv_matrix(text, path);
}

Vector read_vector_file(const std::string& path) {
  const Matrix m = read_matrix_file(path);
  if (m.rows() == 1) return m.row(0).transpose();
  if (m.cols() == 1) return m.col(0);
  throw PreconditionError(path + ": expected a single row or column, found " +
                          std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
}

std::string matrix_csv(const Matrix& m, const std::vector<std::string>& header) {
  std::string out;
  for (const std::string& h : header) out += "# " + h + "\n";
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out += ',';
      out += format_number(m(i, j));
    }
    out += '\n';
  }
  return out;
}

void write_output(const std::string& path, const std::string& content, std::ostream& console) {
  if (path.empty() || path == "-") {
    console << content << std::flush;
    return;
  }
  const std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw PreconditionError(path + ": cannot write output");
    out << content;
    out.flush();
    if (!out) {
      std::filesystem::remove(tmp);
      throw PreconditionError(path + ": write failed");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) {
    std::filesystem::remove(tmp);
    throw PreconditionError(path + ": cannot move output into place: " + ec.message());
  }
}

}  // namespace eot::cli
