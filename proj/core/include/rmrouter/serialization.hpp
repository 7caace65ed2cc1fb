#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

// JSON helpers shared by every persisted document. Doubles are written with
// the shortest representation that round-trips, so save -> load -> save is
// byte-identical.
namespace rmrouter::io {

nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j, std::string_view field);

// Matrix as an array of row arrays.
nlohmann::json matrix_to_rows(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_rows(const nlohmann::json& j, std::string_view field);

// Matrix as a flat row-major array.
nlohmann::json matrix_to_row_major(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_row_major(const nlohmann::json& j, Eigen::Index rows,
                                      Eigen::Index cols, std::string_view field);

// Throws FormatError unless doc["kind"] == kind and doc["version"] == version.
// The message names the supported version.
void check_document(const nlohmann::json& doc, std::string_view kind, int version);

const nlohmann::json& require(const nlohmann::json& doc, std::string_view field);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

// Pretty-printed document with a trailing newline.
std::string dump_document(const nlohmann::json& doc);
nlohmann::json parse_document(std::string_view text);

// Calls fn(object, line_number) for every non-blank line. A line holding only
// a "_provenance" key is skipped. Throws FormatError with the line number on
// unparsable lines.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const nlohmann::json&, std::size_t)>& fn);

// First line of a JSONL output: the configuration that produced the file.
std::string provenance_line(const nlohmann::json& config);

}  // namespace rmrouter::io
