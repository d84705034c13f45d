#ifndef MORLAIF_JSON_UTIL_HPP_
#define MORLAIF_JSON_UTIL_HPP_

#include <Eigen/Dense>

#include <filesystem>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

namespace morlaif {

nlohmann::json vector_to_json(const Eigen::Ref<const Eigen::VectorXd>& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);
// Row-major nested arrays.
nlohmann::json matrix_to_json(const Eigen::Ref<const Eigen::MatrixXd>& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

// Doubles are written with full round-trip precision.
void write_json_file(const std::filesystem::path& path, const nlohmann::ordered_json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

// Throws ValidationError naming the first key of `j` not in `allowed`.
void check_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                std::string_view context);

// Shortest decimal text that parses back to the same double.
std::string format_double(double x);

}  // namespace morlaif

#endif  // MORLAIF_JSON_UTIL_HPP_
