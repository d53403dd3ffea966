#pragma once

// Field access for JSON configs with errors that name the field.

#include "json.hpp"

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <type_traits>

namespace hynea {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

template <class T>
T field(const nlohmann::json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        const auto& v = j.at(key);
        const bool negative = v.is_number_integer() && !v.is_number_unsigned() && v.template get<std::int64_t>() < 0;
        if (v.is_number_float() || negative) {
            throw ConfigError("config field '" + key + "': expected a non-negative integer");
        }
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config field '" + key + "': " + e.what());
    }
}

/// Rejects keys outside `allowed` so typos do not silently fall back to defaults.
inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError(where + ": unknown field '" + key + "'");
    }
}

}  // namespace hynea
