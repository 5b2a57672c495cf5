// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <string>
#include <utility>
#include <vector>

namespace kdr::http {

struct Response {
    int status = 0;
    std::string body;
};

using Headers = std::vector<std::pair<std::string, std::string>>;

/// POSTs a JSON body to `base_url` + `path`. Connection failures throw
/// Error(backend_unavailable); HTTP error statuses are returned to the caller.
Response post_json(const std::string& base_url, const std::string& path, const std::string& body,
                   const Headers& headers, std::chrono::seconds timeout);

} // namespace kdr::http
