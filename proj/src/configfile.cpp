#include "dynalab/configfile.hpp"

#include <cctype>
#include <climits>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "dynalab/errors.hpp"

namespace dynalab::config {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    const std::string last = trim(cur);
    if (!last.empty() || !parts.empty()) parts.push_back(last);
    return parts;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* wanted) {
    throw ConfigError("config key '" + key + "' holds '" + value + "', expected " + wanted);
}

}  // namespace

void ConfigMap::set(const std::string& key, const std::string& value) {
    if (key.empty()) throw ConfigError("empty config key");
    if (values_.find(key) == values_.end()) order_.push_back(key);
    values_[key] = value;
}

bool ConfigMap::contains(const std::string& key) const {
    return values_.find(key) != values_.end();
}

const std::string& ConfigMap::raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
    return it->second;
}

std::string ConfigMap::get_string(const std::string& key) const { return raw(key); }

std::string ConfigMap::get_string(const std::string& key, const std::string& fallback) const {
    return contains(key) ? raw(key) : fallback;
}

double ConfigMap::get_double(const std::string& key) const {
    const std::string& v = raw(key);
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) bad_value(key, v, "a number");
        return d;
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        bad_value(key, v, "a number");
    }
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
    return contains(key) ? get_double(key) : fallback;
}

int ConfigMap::get_int(const std::string& key) const {
    const std::string& v = raw(key);
    try {
        std::size_t pos = 0;
        const long long i = std::stoll(v, &pos);
        if (pos != v.size() || i < INT_MIN || i > INT_MAX) bad_value(key, v, "an integer");
        return static_cast<int>(i);
    } catch (const ConfigError&) {
        throw;
    } catch (...) {
        bad_value(key, v, "an integer");
    }
}

int ConfigMap::get_int(const std::string& key, int fallback) const {
    return contains(key) ? get_int(key) : fallback;
}

bool ConfigMap::get_bool(const std::string& key) const {
    const std::string& v = raw(key);
    if (v == "true") return true;
    if (v == "false") return false;
    bad_value(key, v, "'true' or 'false'");
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
    return contains(key) ? get_bool(key) : fallback;
}

std::vector<int> ConfigMap::get_int_list(const std::string& key) const {
    std::vector<int> out;
    for (const std::string& p : split_list(raw(key))) {
        try {
            std::size_t pos = 0;
            out.push_back(static_cast<int>(std::stoll(p, &pos)));
            if (pos != p.size()) bad_value(key, raw(key), "a comma-separated integer list");
        } catch (const ConfigError&) {
            throw;
        } catch (...) {
            bad_value(key, raw(key), "a comma-separated integer list");
        }
    }
    return out;
}

std::vector<double> ConfigMap::get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const std::string& p : split_list(raw(key))) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stod(p, &pos));
            if (pos != p.size()) bad_value(key, raw(key), "a comma-separated number list");
        } catch (const ConfigError&) {
            throw;
        } catch (...) {
            bad_value(key, raw(key), "a comma-separated number list");
        }
    }
    return out;
}

std::vector<std::uint64_t> ConfigMap::get_seed_list(const std::string& key) const {
    std::vector<std::uint64_t> out;
    for (const std::string& p : split_list(raw(key))) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stoull(p, &pos));
            if (pos != p.size()) bad_value(key, raw(key), "a comma-separated seed list");
        } catch (const ConfigError&) {
            throw;
        } catch (...) {
            bad_value(key, raw(key), "a comma-separated seed list");
        }
    }
    return out;
}

std::string ConfigMap::serialize() const {
    std::ostringstream out;
    std::string current_section;
    bool first = true;
    for (const std::string& key : order_) {
        const std::size_t dot = key.find('.');
        const std::string section = dot == std::string::npos ? "" : key.substr(0, dot);
        const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
        if (section != current_section || first) {
            if (!first) out << "\n";
            if (!section.empty()) out << "[" << section << "]\n";
            current_section = section;
            first = false;
        }
        out << name << " = " << values_.at(key) << "\n";
    }
    return out.str();
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string join_ints(const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += format_double(v[i]);
    }
    return out;
}

std::string join_seeds(const std::vector<std::uint64_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

ConfigMap parse_config_text(const std::string& text) {
    ConfigMap map;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError("config line " + std::to_string(line_no) +
                                  ": unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty())
                throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
            continue;
        }
        const std::size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) +
                              ": expected 'key = value', got '" + t + "'");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
        map.set(section.empty() ? key : section + "." + key, value);
    }
    return map;
}

ConfigMap load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

void save_config_file(const ConfigMap& map, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write config file '" + path + "'");
    out << map.serialize();
}

}  // namespace dynalab::config
