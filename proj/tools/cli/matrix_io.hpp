#pragma once

// Reading and writing matrices and vectors as CSV (or JSON arrays), and
// atomic file output.

#include <ostream>
#include <string>
#include <vector>

#include "eot/matrix.hpp"

namespace eot::cli {

/// Parses comma-separated rows. Blank lines and lines starting with '#'
/// are skipped. Errors are PreconditionError with "source:line:column".
Matrix parse_csv_matrix(const std::string& text, const std::string& source);

/// A JSON array of rows (or a flat array, read as one row).
Matrix parse_json_matrix(const std::string& text, const std::string& source);

/// Reads a file, choosing JSON for a ".json" extension and CSV otherwise.
Matrix read_matrix_file(const std::string& path);

/// A matrix file with a single row or a single column.
Vector read_vector_file(const std::string& path);

std::string read_text_file(const std::string& path);

/// One "# line" per header entry, then the rows in shortest round-trip form.
std::string matrix_csv(const Matrix& m, const std::vector<std::string>& header = {});

/// Writes through a temporary file in the same directory and renames it
/// into place. "-" (or an empty path) writes to `console` instead.
void write_output(const std::string& path, const std::string& content, std::ostream& console);

}  // namespace eot::cli
