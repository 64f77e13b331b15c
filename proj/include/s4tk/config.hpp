#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "s4tk/errors.hpp"
#include "vendor/json.hpp"

// Run configuration files. The native format is a TOML subset — comments,
// [dotted.tables], and key = value lines where values are strings, booleans,
// numbers, or single-line arrays of those — parsed into the same JSON tree a
// .json config would produce, so downstream code never cares which was used.

namespace s4tk::cfg {

namespace detail {

inline std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Removes a trailing comment that is not inside a quoted string.
inline std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
        if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
}

inline bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-') return false;
    return true;
}

inline nlohmann::json parse_scalar(const std::string& raw, int line_no) {
    std::string v = strip(raw);
    if (v.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            throw ConfigError("config line " + std::to_string(line_no) + ": unterminated string");
        std::string out;
        for (size_t i = 1; i + 1 < v.size(); ++i) {
            char c = v[i];
            if (c == '\\') {
                if (i + 2 >= v.size())
                    throw ConfigError("config line " + std::to_string(line_no) + ": bad escape");
                char e = v[++i];
                if (e == 'n') out += '\n';
                else if (e == 't') out += '\t';
                else if (e == '"') out += '"';
                else if (e == '\\') out += '\\';
                else throw ConfigError("config line " + std::to_string(line_no) + ": bad escape \\" + e);
            } else {
                out += c;
            }
        }
        return out;
    }
    if (v == "true") return true;
    if (v == "false") return false;
    // Number: integer when it parses fully as one, float otherwise.
    try {
        size_t used = 0;
        long long i = std::stoll(v, &used);
        if (used == v.size()) return i;
    } catch (...) {
    }
    try {
        size_t used = 0;
        double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (...) {
    }
    throw ConfigError("config line " + std::to_string(line_no) + ": cannot parse value '" + v + "'");
}

inline nlohmann::json parse_value(const std::string& raw, int line_no) {
    std::string v = strip(raw);
    if (!v.empty() && v.front() == '[') {
        if (v.back() != ']')
            throw ConfigError("config line " + std::to_string(line_no) + ": array must close on the same line");
        nlohmann::json arr = nlohmann::json::array();
        std::string inner = v.substr(1, v.size() - 2);
        std::string item;
        bool in_str = false;
        for (char c : inner) {
            if (c == '"') in_str = !in_str;
            if (c == ',' && !in_str) {
                if (!strip(item).empty()) arr.push_back(parse_scalar(item, line_no));
                item.clear();
            } else {
                item += c;
            }
        }
        if (!strip(item).empty()) arr.push_back(parse_scalar(item, line_no));
        return arr;
    }
    return parse_scalar(v, line_no);
}

} // namespace detail

inline nlohmann::json parse_toml(const std::string& text) {
    nlohmann::json root = nlohmann::json::object();
    nlohmann::json* table = &root;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string s = detail::strip(detail::strip_comment(line));
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']')
                throw ConfigError("config line " + std::to_string(line_no) + ": unterminated table header");
            std::string path = detail::strip(s.substr(1, s.size() - 2));
            table = &root;
            size_t pos = 0;
            while (pos <= path.size()) {
                size_t dot = path.find('.', pos);
                std::string part = detail::strip(path.substr(pos, dot == std::string::npos ? dot : dot - pos));
                if (!detail::valid_key(part))
                    throw ConfigError("config line " + std::to_string(line_no) + ": bad table name '" + path + "'");
                table = &(*table)[part];
                if (!table->is_object() && !table->is_null())
                    throw ConfigError("config line " + std::to_string(line_no) + ": table '" + path +
                                      "' collides with a value");
                if (table->is_null()) *table = nlohmann::json::object();
                if (dot == std::string::npos) break;
                pos = dot + 1;
            }
            continue;
        }
        size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        std::string key = detail::strip(s.substr(0, eq));
        if (!detail::valid_key(key))
            throw ConfigError("config line " + std::to_string(line_no) + ": bad key '" + key + "'");
        if (table->contains(key))
            throw ConfigError("config line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        (*table)[key] = detail::parse_value(s.substr(eq + 1), line_no);
    }
    return root;
}

// JSON when the extension or the leading character says so, TOML otherwise.
inline nlohmann::json load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    bool looks_json = path.size() > 5 && path.substr(path.size() - 5) == ".json";
    if (!looks_json) {
        for (char c : text) {
            if (std::isspace(static_cast<unsigned char>(c))) continue;
            looks_json = c == '{';
            break;
        }
    }
    if (looks_json) {
        try {
            return nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad JSON config ") + path + ": " + e.what());
        }
    }
    return parse_toml(text);
}

// FNV-1a over the canonical dump; stable across field order in the file.
inline std::string config_hash(const nlohmann::json& j) {
    std::string dump = j.dump();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[19];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Typed field access with defaulting; wrong types become ConfigError instead
// of json exceptions so the CLI reports them under exit code 2.
template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
    if (!j.is_object() || !j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw ConfigError("config field '" + key + "' has the wrong type");
    }
}

} // namespace s4tk::cfg
