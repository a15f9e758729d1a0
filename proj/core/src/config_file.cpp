#include "mcn/config_file.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>

namespace mcn {

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

double parse_double(const std::string& text, const std::string& context) {
    const std::string t = trim(text);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(value)) {
        throw ConfigError(context + ": '" + text + "' is not a number");
    }
    return value;
}

long long parse_int(const std::string& text, const std::string& context) {
    const std::string t = trim(text);
    long long value = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
        throw ConfigError(context + ": '" + text + "' is not an integer");
    }
    return value;
}

ConfigFile ConfigFile::parse(std::istream& in) {
    ConfigFile cfg;
    std::string section;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find_first_of("#;");
        const std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty()) continue;
        if (body.front() == '[') {
            if (body.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": unterminated section");
            section = trim(std::string_view(body).substr(1, body.size() - 2));
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + body + "'");
        }
        std::string key = trim(std::string_view(body).substr(0, eq));
        if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
        cfg.sections_[section][key] = trim(std::string_view(body).substr(eq + 1));
    }
    return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    return parse(in);
}

bool ConfigFile::has(const std::string& section, const std::string& key) const {
    return get(section, key).has_value();
}

std::optional<std::string> ConfigFile::get(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return std::nullopt;
    const auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    return k->second;
}

void ConfigFile::set(const std::string& section, const std::string& key, std::string value) {
    sections_[section][key] = std::move(value);
}

std::string ConfigFile::get_string(const std::string& section, const std::string& key,
                                   const std::string& fallback) const {
    return get(section, key).value_or(fallback);
}

double ConfigFile::get_double(const std::string& section, const std::string& key, double fallback) const {
    const auto v = get(section, key);
    return v ? parse_double(*v, "[" + section + "] " + key) : fallback;
}

long long ConfigFile::get_int(const std::string& section, const std::string& key, long long fallback) const {
    const auto v = get(section, key);
    return v ? parse_int(*v, "[" + section + "] " + key) : fallback;
}

bool ConfigFile::get_bool(const std::string& section, const std::string& key, bool fallback) const {
    const auto v = get(section, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes" || *v == "on") return true;
    if (*v == "false" || *v == "0" || *v == "no" || *v == "off") return false;
    throw ConfigError("[" + section + "] " + key + ": '" + *v + "' is not a boolean");
}

}  // namespace mcn
