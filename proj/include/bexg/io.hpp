#pragma once

// Run configuration (key = value files plus overrides), config hashing and
// an output directory that writes payload files atomically and keeps
// timestamps in a sidecar manifest only.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "bexg/error.hpp"

namespace bexg::io {

inline constexpr int kFormatVersion = 1;

using Json = nlohmann::ordered_json;

struct UsageError : ConfigError {
    using ConfigError::ConfigError;
};

inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Shortest round-trip decimal for doubles; "nan"/"inf" spelled out.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

inline Json json_number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

inline Json json_number(const std::optional<double>& v) { return v ? json_number(*v) : Json(nullptr); }

class Config {
  public:
    /// `key = value` lines; '#' starts a comment; `[section]` prefixes keys
    /// with "section.". Values may be double-quoted.
    static Config parse(std::istream& in) {
        Config c;
        std::string line, section;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const auto hash = line.find('#');
            if (hash != std::string::npos && line.find('"') > hash) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ParseError(lineno, "unterminated section header");
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ParseError(lineno, "expected key = value");
            std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
            if (key.empty()) throw ParseError(lineno, "empty key");
            if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
            c.values_[section.empty() ? key : section + "." + key] = value;
        }
        return c;
    }

    static Config load(const std::filesystem::path& p) {
        std::ifstream in(p);
        if (!in) throw ConfigError("cannot open config file " + p.string());
        return parse(in);
    }

    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
    bool has(const std::string& key) const { return values_.count(key) > 0; }
    const std::map<std::string, std::string>& values() const { return values_; }

    std::string str(const std::string& key, const std::string& def = "") const {
        const auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    long long integer(const std::string& key, long long def) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::size_t used = 0;
        long long v = 0;
        try {
            v = std::stoll(it->second, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != it->second.size()) throw UsageError(key + ": expected an integer, got '" + it->second + "'");
        return v;
    }

    std::uint64_t u64(const std::string& key, std::uint64_t def) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::size_t used = 0;
        std::uint64_t v = 0;
        try {
            v = std::stoull(it->second, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != it->second.size() || it->second.front() == '-')
            throw UsageError(key + ": expected an unsigned integer, got '" + it->second + "'");
        return v;
    }

    double real(const std::string& key, double def) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return def;
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(it->second, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != it->second.size()) throw UsageError(key + ": expected a number, got '" + it->second + "'");
        return v;
    }

    /// Canonical text: sorted key=value lines. Output paths and worker counts
    /// do not change payloads and are left out.
    std::string canonical() const {
        std::string s;
        for (const auto& [k, v] : values_) {
            if (k == "out" || k == "jobs") continue;
            s += k + "=" + v + "\n";
        }
        return s;
    }

    std::uint64_t hash(std::string_view command) const { return fnv1a(std::string(command) + "\n" + canonical()); }

  private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t");
        if (b == std::string::npos) return "";
        return s.substr(b, s.find_last_not_of(" \t") - b + 1);
    }

    std::map<std::string, std::string> values_;
};

inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
    static std::atomic<unsigned> counter{0};
    auto tmp = path;
    tmp += ".tmp" + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

struct RunError {
    std::string stage;
    std::string message;
};

/// Output directory for one command run. Thread-safe.
class Output {
  public:
    Output(std::filesystem::path dir, std::string command, const Config& cfg)
        : dir_(std::move(dir)), command_(std::move(command)), hash_(hex64(cfg.hash(command_))), config_(cfg) {
        std::filesystem::create_directories(dir_);
    }

    const std::filesystem::path& dir() const { return dir_; }
    const std::string& config_hash() const { return hash_; }

    void csv(const std::string& name, const std::vector<std::string>& header,
             const std::vector<std::vector<std::string>>& rows) {
        std::ostringstream ss;
        ss << "# bexg " << command_ << " format_version=" << kFormatVersion << " config_hash=" << hash_ << "\n";
        for (std::size_t i = 0; i < header.size(); ++i) ss << (i ? "," : "") << header[i];
        ss << "\n";
        for (const auto& row : rows) {
            for (std::size_t i = 0; i < row.size(); ++i) ss << (i ? "," : "") << row[i];
            ss << "\n";
        }
        put(name, ss.str());
    }

    void json(const std::string& name, const Json& body) {
        Json doc;
        doc["format_version"] = kFormatVersion;
        doc["config_hash"] = hash_;
        doc["command"] = command_;
        for (const auto& [k, v] : body.items()) doc[k] = v;
        put(name, doc.dump(2) + "\n");
    }

    void error(const std::string& stage, const std::string& message) {
        std::lock_guard lock(mu_);
        errors_.push_back({stage, message});
    }

    std::vector<RunError> errors() const {
        std::lock_guard lock(mu_);
        return errors_;
    }

    /// Writes errors.json (when anything failed) and the manifest sidecar.
    /// Returns the exit code: 0 when every analysis completed, 3 otherwise.
    int finish() {
        std::vector<RunError> errs;
        std::vector<std::string> files;
        {
            std::lock_guard lock(mu_);
            errs = errors_;
            files = files_;
        }
        if (!errs.empty()) {
            Json list = Json::array();
            for (const auto& e : errs) list.push_back({{"stage", e.stage}, {"message", e.message}});
            json("errors.json", {{"errors", list}});
            files.push_back("errors.json");
        }
        std::sort(files.begin(), files.end());
        Json manifest;
        manifest["format_version"] = kFormatVersion;
        manifest["config_hash"] = hash_;
        manifest["command"] = command_;
        manifest["created_utc"] = utc_now();
        manifest["config"] = config_.values();
        manifest["files"] = files;
        manifest["errors"] = errs.size();
        write_atomic(dir_ / "manifest.json", manifest.dump(2) + "\n");
        return errs.empty() ? 0 : 3;
    }

  private:
    void put(const std::string& name, const std::string& content) {
        write_atomic(dir_ / name, content);
        std::lock_guard lock(mu_);
        if (std::find(files_.begin(), files_.end(), name) == files_.end()) files_.push_back(name);
    }

    static std::string utc_now() {
        const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&t, &tm);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
        return buf;
    }

    std::filesystem::path dir_;
    std::string command_;
    std::string hash_;
    Config config_;
    mutable std::mutex mu_;
    std::vector<std::string> files_;
    std::vector<RunError> errors_;
};

}  // namespace bexg::io
