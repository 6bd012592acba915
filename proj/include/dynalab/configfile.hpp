#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

// Flat human-readable configuration files: `key = value` lines grouped under
// `[section]` headers. Keys are addressed as "section.key". Insertion order
// is preserved, so a map serializes back to an equivalent file.
namespace dynalab::config {

class ConfigMap {
public:
    // Inserts or overwrites; keeps first-insertion order for serialization.
    void set(const std::string& key, const std::string& value);
    bool contains(const std::string& key) const;
    const std::vector<std::string>& keys() const { return order_; }

    // Raw and typed access; every getter throws ConfigError on a missing key
    // or an unparseable value unless a fallback overload is used.
    const std::string& raw(const std::string& key) const;
    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key) const;
    int get_int(const std::string& key, int fallback) const;
    bool get_bool(const std::string& key) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int> get_int_list(const std::string& key) const;
    std::vector<double> get_double_list(const std::string& key) const;
    std::vector<std::uint64_t> get_seed_list(const std::string& key) const;

    // Groups keys by their section prefix, in first-appearance order.
    std::string serialize() const;

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, std::string> values_;
};

// Helpers for writing values that parse back exactly.
std::string format_double(double v);
std::string join_ints(const std::vector<int>& v);
std::string join_doubles(const std::vector<double>& v);
std::string join_seeds(const std::vector<std::uint64_t>& v);

ConfigMap parse_config_text(const std::string& text);
ConfigMap load_config_file(const std::string& path);
void save_config_file(const ConfigMap& map, const std::string& path);

}  // namespace dynalab::config
