#pragma once

// Versioned artifact containers. Every artifact written by the pipeline
// starts with a magic line (e.g. "MIXCL-IDX v1") followed by one JSON line of
// provenance {tool_version, seed, config_hash}. Readers verify the magic and
// surface a clear error when a stage is pointed at the wrong file.

#include <cstdint>
#include <fstream>
#include <string>

#include <json.hpp>

#include "mixcl/error.hpp"
#include "mixcl/rng.hpp"
#include "mixcl/version.hpp"

namespace mixcl {

struct Provenance {
    std::string tool_version = MIXCL_VERSION;
    std::uint64_t seed = 0;
    std::string config_hash;  // hex fnv1a64 of the canonical config text

    nlohmann::json to_json() const {
        return {{"tool_version", tool_version}, {"seed", seed}, {"config_hash", config_hash}};
    }
    static Provenance from_json(const nlohmann::json& j) {
        Provenance p;
        p.tool_version = j.value("tool_version", "");
        p.seed = j.value("seed", std::uint64_t{0});
        p.config_hash = j.value("config_hash", "");
        return p;
    }
};

inline std::string hash_hex(std::string_view text) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(text)));
    return buf;
}

inline void write_header(std::ostream& out, const std::string& magic, const Provenance& prov) {
    out << magic << "\n" << prov.to_json().dump() << "\n";
}

/// Reads and checks the magic line, returns the provenance line.
inline Provenance read_header(std::istream& in, const std::string& magic, const std::string& path) {
    std::string line;
    if (!std::getline(in, line) || line != magic)
        throw DataError(path + ": expected header `" + magic + "`");
    if (!std::getline(in, line))
        throw DataError(path + ": missing provenance line");
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw DataError(path + ": malformed provenance line");
    return Provenance::from_json(j);
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open output file: " + path);
    return out;
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError("cannot open input file: " + path);
    return in;
}

}  // namespace mixcl
