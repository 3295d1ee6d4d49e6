#pragma once

#include <cmath>
#include <string>

#include <json.hpp>

namespace lmtrace {

using ojson = nlohmann::ordered_json;

// Payload numbers carry 6 decimals; -0 is folded into 0.
inline double round6(double x) {
    const double r = std::round(x * 1e6) / 1e6;
    return r == 0.0 ? 0.0 : r;
}

// Canonical document text shared by the service and the CLI. Token strings
// may hold partial UTF-8 sequences; invalid bytes become U+FFFD.
inline std::string dump_document(const ojson& doc) {
    return doc.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

}  // namespace lmtrace
