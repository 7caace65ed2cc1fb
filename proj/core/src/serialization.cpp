#include "rmrouter/serialization.hpp"

#include <fstream>
#include <sstream>

#include "rmrouter/errors.hpp"

namespace rmrouter::io {

using nlohmann::json;

namespace {

std::string field_name(std::string_view field) { return std::string(field); }

}  // namespace

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    out.push_back(v[i]);
  }
  return out;
}

Eigen::VectorXd vector_from_json(const json& j, std::string_view field) {
  if (!j.is_array()) {
    throw FormatError(0, "field '" + field_name(field) + "' must be an array of numbers");
  }
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) {
      throw FormatError(0, "field '" + field_name(field) + "' holds a non-numeric entry");
    }
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

json matrix_to_rows(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    out.push_back(vector_to_json(m.row(r).transpose()));
  }
  return out;
}

Eigen::MatrixXd matrix_from_rows(const json& j, std::string_view field) {
  if (!j.is_array()) {
    throw FormatError(0, "field '" + field_name(field) + "' must be an array of rows");
  }
  if (j.empty()) {
    return Eigen::MatrixXd(0, 0);
  }
  const auto cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    Eigen::VectorXd row = vector_from_json(j[r], field);
    if (row.size() != cols) {
      throw FormatError(0, "field '" + field_name(field) + "' has ragged rows");
    }
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

json matrix_to_row_major(const Eigen::MatrixXd& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out.push_back(m(r, c));
    }
  }
  return out;
}

Eigen::MatrixXd matrix_from_row_major(const json& j, Eigen::Index rows, Eigen::Index cols,
                                      std::string_view field) {
  Eigen::VectorXd flat = vector_from_json(j, field);
  if (flat.size() != rows * cols) {
    throw FormatError(0, "field '" + field_name(field) + "' has " + std::to_string(flat.size()) +
                             " entries, expected " + std::to_string(rows * cols));
  }
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      m(r, c) = flat[r * cols + c];
    }
  }
  return m;
}

const json& require(const json& doc, std::string_view field) {
  auto it = doc.find(std::string(field));
  if (it == doc.end()) {
    throw FormatError(0, "missing field '" + field_name(field) + "'");
  }
  return *it;
}

void check_document(const json& doc, std::string_view kind, int version) {
  if (!doc.is_object()) {
    throw FormatError(0, "document is not a JSON object");
  }
  const std::string found_kind = doc.value("kind", std::string{});
  if (found_kind != kind) {
    throw FormatError(0, "expected a '" + std::string(kind) + "' document, found '" + found_kind + "'");
  }
  const json& v = require(doc, "version");
  if (!v.is_number_integer() || v.get<int>() != version) {
    throw FormatError(0, "unsupported " + std::string(kind) + " version " + v.dump() +
                             "; supported versions: " + std::to_string(version));
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError(0, "cannot open '" + path.string() + "'");
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError(0, "cannot write '" + path.string() + "'");
  }
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

std::string dump_document(const json& doc) { return doc.dump(2) + "\n"; }

json parse_document(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw FormatError(0, std::string("invalid JSON: ") + e.what());
  }
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, std::size_t)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError(0, "cannot open '" + path.string() + "'");
  }
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      continue;
    }
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError(line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) {
      throw FormatError(line_no, "expected a JSON object");
    }
    if (obj.size() == 1 && obj.contains("_provenance")) {
      continue;
    }
    try {
      fn(obj, line_no);
    } catch (const FormatError& e) {
      if (e.line() != 0) {
        throw;
      }
      throw FormatError(line_no, e.what());
    } catch (const json::exception& e) {
      throw FormatError(line_no, e.what());
    }
  }
}

std::string provenance_line(const json& config) {
  json line = json::object();
  line["_provenance"] = config;
  return line.dump() + "\n";
}

}  // namespace rmrouter::io
