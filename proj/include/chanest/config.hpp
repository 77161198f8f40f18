#pragma once

#include <fstream>
#include <map>
#include <sstream>

#include "binio.hpp"

namespace chanest::config {

/// Flat key-value configuration: one `key = value` per line, '#' comments,
/// lists comma-separated. Keeps the raw bytes for provenance hashing.
class Config {
public:
    static Config from_file(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        return from_string(ss.str(), path);
    }

    static Config from_string(const std::string& text, const std::string& origin = "<string>") {
        Config c;
        c.origin_ = origin;
        c.raw_ = text;
        std::stringstream ss(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(ss, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                         ": expected 'key = value'");
            c.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
        }
        return c;
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end())
            throw std::runtime_error("config " + origin_ + ": missing key '" + key + "'");
        return it->second;
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    double get_double(const std::string& key) const { return parse_double(key, get_string(key)); }
    double get_double(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    long long get_int(const std::string& key) const {
        const std::string s = get_string(key);
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw std::runtime_error("config " + origin_ + ": key '" + key +
                                     "' is not an integer: '" + s + "'");
        }
    }
    long long get_int(const std::string& key, long long fallback) const {
        return has(key) ? get_int(key) : fallback;
    }

    std::vector<double> get_double_list(const std::string& key) const {
        std::vector<double> out;
        for (const auto& item : split(get_string(key))) out.push_back(parse_double(key, item));
        if (out.empty())
            throw std::runtime_error("config " + origin_ + ": key '" + key + "' is an empty list");
        return out;
    }

    std::vector<std::string> get_string_list(const std::string& key) const {
        const auto out = split(get_string(key));
        if (out.empty())
            throw std::runtime_error("config " + origin_ + ": key '" + key + "' is an empty list");
        return out;
    }

    std::string hash() const { return binio::fnv1a_hex(raw_); }
    const std::string& origin() const { return origin_; }

private:
    static std::string trim(std::string s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    static std::vector<std::string> split(const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string item;
        while (std::getline(ss, item, ',')) {
            const std::string t = trim(item);
            if (!t.empty()) out.push_back(t);
        }
        return out;
    }

    double parse_double(const std::string& key, const std::string& s) const {
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw std::runtime_error("config " + origin_ + ": key '" + key +
                                     "' is not a number: '" + s + "'");
        }
    }

    std::string origin_;
    std::string raw_;
    std::map<std::string, std::string> values_;
};

}  // namespace chanest::config
