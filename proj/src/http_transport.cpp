// SPDX-License-Identifier: Apache-2.0
#include "kdr/http.hpp"

#include "kdr/error.hpp"

#include <httplib.h>

namespace kdr::http {
namespace {

struct SplitUrl {
    std::string origin; // scheme://host[:port]
    std::string prefix; // path part, without trailing slash
};

SplitUrl split_url(const std::string& url) {
    auto scheme = url.find("://");
    if (scheme == std::string::npos) throw Error(Errc::backend_unavailable, "endpoint needs a scheme: " + url);
    auto slash = url.find('/', scheme + 3);
    SplitUrl out;
    out.origin = slash == std::string::npos ? url : url.substr(0, slash);
    out.prefix = slash == std::string::npos ? "" : url.substr(slash);
    while (!out.prefix.empty() && out.prefix.back() == '/') out.prefix.pop_back();
    return out;
}

} // namespace

Response post_json(const std::string& base_url, const std::string& path, const std::string& body,
                   const Headers& headers, std::chrono::seconds timeout) {
    const auto url = split_url(base_url);
#ifndef KDR_HTTPS
    if (url.origin.rfind("https://", 0) == 0) {
        throw Error(Errc::backend_unavailable, "built without TLS support: " + base_url);
    }
#endif
    httplib::Client client(url.origin);
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers hdrs;
    for (const auto& [k, v] : headers) hdrs.emplace(k, v);
    auto res = client.Post(url.prefix + path, hdrs, body, "application/json");
    if (!res) {
        throw Error(Errc::backend_unavailable, base_url + path + ": " + httplib::to_string(res.error()));
    }
    return Response{res->status, res->body};
}

} // namespace kdr::http
