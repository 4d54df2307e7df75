#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "stepkd/errors.hpp"

namespace stepkd::jsonl {

using json = nlohmann::json;

// Calls `fn(object, line_number)` for every non-blank line. Lines that are
// not JSON objects raise ParseError with the 1-based line number.
void for_each_object(const std::filesystem::path& path,
                     const std::function<void(const json&, std::size_t)>& fn);

std::ofstream open_for_write(const std::filesystem::path& path, bool append = false);

// Compact single-line dump with a trailing newline.
std::string to_line(const json& obj);

// Typed field accessors that raise SchemaError naming the field.
const json& require(const json& obj, std::string_view field, std::size_t line);
std::string require_string(const json& obj, std::string_view field, std::size_t line);
std::vector<std::string> require_string_list(const json& obj, std::string_view field,
                                             std::size_t line);
long long require_int(const json& obj, std::string_view field, std::size_t line);
double require_number(const json& obj, std::string_view field, std::size_t line);

}  // namespace stepkd::jsonl
