#include "stepkd/jsonl.hpp"

#include "stepkd/text.hpp"

namespace stepkd::jsonl {

void for_each_object(const std::filesystem::path& path,
                     const std::function<void(const json&, std::size_t)>& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(lineno, std::string("invalid JSON: ") + e.what());
        }
        if (!obj.is_object()) throw ParseError(lineno, "expected a JSON object");
        fn(obj, lineno);
    }
}

std::ofstream open_for_write(const std::filesystem::path& path, bool append) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc));
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    return out;
}

std::string to_line(const json& obj) {
    return obj.dump(-1, ' ', false, json::error_handler_t::replace) + "\n";
}

const json& require(const json& obj, std::string_view field, std::size_t line) {
    auto it = obj.find(field);
    if (it == obj.end()) throw SchemaError(line, std::string(field), "missing");
    return *it;
}

std::string require_string(const json& obj, std::string_view field, std::size_t line) {
    const json& v = require(obj, field, line);
    if (!v.is_string()) throw SchemaError(line, std::string(field), "expected a string");
    return v.get<std::string>();
}

std::vector<std::string> require_string_list(const json& obj, std::string_view field,
                                             std::size_t line) {
    const json& v = require(obj, field, line);
    if (!v.is_array()) throw SchemaError(line, std::string(field), "expected a list of strings");
    std::vector<std::string> out;
    out.reserve(v.size());
    for (const auto& item : v) {
        if (!item.is_string())
            throw SchemaError(line, std::string(field), "expected a list of strings");
        out.push_back(item.get<std::string>());
    }
    return out;
}

long long require_int(const json& obj, std::string_view field, std::size_t line) {
    const json& v = require(obj, field, line);
    if (!v.is_number_integer()) throw SchemaError(line, std::string(field), "expected an integer");
    return v.get<long long>();
}

double require_number(const json& obj, std::string_view field, std::size_t line) {
    const json& v = require(obj, field, line);
    if (!v.is_number()) throw SchemaError(line, std::string(field), "expected a number");
    return v.get<double>();
}

}  // namespace stepkd::jsonl
