// ChatTransport backed by cpp-httplib. Only the CLI includes this; the
// library and tests use injected transports.
#ifndef CRLAB_HTTP_TRANSPORT_HPP_
#define CRLAB_HTTP_TRANSPORT_HPP_

#include <chrono>
#include <string>
#include <string_view>

#include <httplib.h>

#include "crlab/error.hpp"
#include "crlab/synthgen.hpp"

namespace crlab {

struct UrlParts {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline UrlParts split_url(std::string_view url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos)
    throw ValidationError("endpoint URL needs a scheme: '" + std::string(url) + "'");
  const auto scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https")
    throw ValidationError("unsupported URL scheme '" + std::string(scheme) + "'");
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
  if (scheme == "https")
    throw ValidationError("this build has no TLS support; use an http:// endpoint");
#endif
  const auto slash = url.find('/', scheme_end + 3);
  UrlParts p;
  p.origin = std::string(url.substr(0, slash));
  p.path = slash == std::string_view::npos ? "/" : std::string(url.substr(slash));
  if (p.origin.size() <= scheme_end + 3) throw ValidationError("endpoint URL has no host");
  return p;
}

inline ChatTransport http_transport() {
  return [](const HttpRequest& req) -> HttpResponse {
    const auto parts = split_url(req.url);
    httplib::Client cli(parts.origin);
    const auto whole = std::chrono::duration<double>(req.timeout_seconds);
    const auto us = std::chrono::duration_cast<std::chrono::microseconds>(whole);
    cli.set_connection_timeout(us);
    cli.set_read_timeout(us);
    cli.set_write_timeout(us);
    httplib::Headers headers;
    std::string content_type = "application/json";
    for (const auto& [k, v] : req.headers) {
      if (k == "Content-Type") content_type = v;
      else headers.emplace(k, v);
    }
    const auto t0 = std::chrono::steady_clock::now();
    auto res = cli.Post(parts.path, headers, req.body, content_type);
    if (!res) {
      const auto err = res.error();
      const double dt =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      // httplib reports an expired read deadline as a plain read error.
      const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                             (err == httplib::Error::Read && dt >= 0.95 * req.timeout_seconds);
      throw TransportError(timed_out ? TransportFailure::timeout : TransportFailure::connection,
                           httplib::to_string(err));
    }
    return {res->status, res->body};
  };
}

}  // namespace crlab

#endif  // CRLAB_HTTP_TRANSPORT_HPP_
