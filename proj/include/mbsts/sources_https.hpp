#pragma once

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "mbsts/sources.hpp"

namespace mbsts {

inline Fetcher https_fetcher() {
    return [](const std::string& url) -> std::string {
        const auto scheme_end = url.find("://");
        if (scheme_end == std::string::npos) {
            fail(ErrorKind::config, "bad url " + url);
        }
        const auto path_start = url.find('/', scheme_end + 3);
        const std::string origin = url.substr(0, path_start);
        const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);
        httplib::Client client(origin);
        client.set_follow_location(true);
        client.set_connection_timeout(20);
        client.set_read_timeout(120);
        auto res = client.Get(path);
        if (!res) {
            fail(ErrorKind::network, "GET " + url + " failed: " + httplib::to_string(res.error()));
        }
        if (res->status != 200) {
            fail(ErrorKind::network, "GET " + url + " returned HTTP " + std::to_string(res->status));
        }
        return res->body;
    };
}

} // namespace mbsts
