#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace p2c {

// Line-oriented "key = value" configuration with dotted keys, '#' comments.
class Config {
public:
    Config() = default;

    static Config parse(std::istream& is) {
        Config c;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            auto trim = [](std::string s) {
                auto b = s.find_first_not_of(" \t\r\n");
                auto e = s.find_last_not_of(" \t\r\n");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            std::string t = trim(line);
            if (t.empty()) continue;
            auto eq = t.find('=');
            if (eq == std::string::npos)
                throw std::runtime_error("config line " + std::to_string(lineno) + ": missing '='");
            std::string key = trim(t.substr(0, eq));
            std::string val = trim(t.substr(eq + 1));
            if (key.empty())
                throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
            c.values_[key] = val;
        }
        return c;
    }

    static Config load(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw std::runtime_error("cannot open config file: " + path);
        return parse(f);
    }

    static Config parse_string(const std::string& text) {
        std::istringstream ss(text);
        return parse(ss);
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_str(const std::string& key, const std::string& def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    double get_double(const std::string& key, double def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try { return std::stod(it->second); }
        catch (...) { throw std::runtime_error("config: '" + key + "' is not a number: " + it->second); }
    }

    long long get_int(const std::string& key, long long def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try { return std::stoll(it->second); }
        catch (...) { throw std::runtime_error("config: '" + key + "' is not an integer: " + it->second); }
    }

    bool get_bool(const std::string& key, bool def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
        if (it->second == "false" || it->second == "0" || it->second == "no") return false;
        throw std::runtime_error("config: '" + key + "' is not a bool: " + it->second);
    }

    std::vector<int> get_int_list(const std::string& key, std::vector<int> def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::vector<int> out;
        std::stringstream ss(it->second);
        std::string tok;
        while (std::getline(ss, tok, ','))
            if (!tok.empty()) out.push_back(std::stoi(tok));
        return out;
    }

    void set(const std::string& key, const std::string& val) { values_[key] = val; }

    std::string echo() const {
        std::string out;
        for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
        return out;
    }

    const std::map<std::string, std::string>& items() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace p2c
