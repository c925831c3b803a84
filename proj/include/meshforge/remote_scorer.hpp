#pragma once

// HTTP client for an external image-text scorer.
//
//   POST /v1/score        {prompt, width, height, images: [b64 f32 LE rgb], want_grad}
//                      -> {loss, similarities: [..], grads: [b64 f32 LE rgb]}
//   POST /v1/encode_text  {prompt} -> {embedding: [..]}

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"
#include "loss.hpp"
#include "types.hpp"

// keep after the Eigen includes
#include <httplib.h>
#include <json.hpp>

namespace meshforge {

inline std::string base64_encode(std::string_view bytes) {
  static constexpr char table[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t n = std::uint32_t(std::uint8_t(bytes[i])) << 16 | std::uint32_t(std::uint8_t(bytes[i + 1])) << 8 |
                            std::uint8_t(bytes[i + 2]);
    out += table[n >> 18 & 63];
    out += table[n >> 12 & 63];
    out += table[n >> 6 & 63];
    out += table[n & 63];
  }
  if (const std::size_t rest = bytes.size() - i) {
    std::uint32_t n = std::uint32_t(std::uint8_t(bytes[i])) << 16;
    if (rest == 2) n |= std::uint32_t(std::uint8_t(bytes[i + 1])) << 8;
    out += table[n >> 18 & 63];
    out += table[n >> 12 & 63];
    out += rest == 2 ? table[n >> 6 & 63] : '=';
    out += '=';
  }
  return out;
}

// Throws ProtocolError mentioning `field` on malformed input.
inline std::string base64_decode(std::string_view text, const std::string& field = "base64") {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw ProtocolError("field '" + field + "': base64 length is not a multiple of 4");
  std::string out;
  out.reserve(text.size() / 4 * 3);
  for (std::size_t i = 0; i < text.size(); i += 4) {
    int v[4];
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      if (c == '=' && i + 4 == text.size() && k >= 2) {
        v[k] = 0;
        ++pad;
        continue;
      }
      if (pad > 0 || (v[k] = value(c)) < 0) throw ProtocolError("field '" + field + "': invalid base64 data");
    }
    const std::uint32_t n = std::uint32_t(v[0]) << 18 | std::uint32_t(v[1]) << 12 | std::uint32_t(v[2]) << 6 | std::uint32_t(v[3]);
    out += char(n >> 16 & 255);
    if (pad < 2) out += char(n >> 8 & 255);
    if (pad < 1) out += char(n & 255);
  }
  return out;
}

inline std::string encode_float32_le(const std::vector<double>& values) {
  std::string bytes(values.size() * 4, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(float(values[i]));
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = char(u >> (8 * b) & 255);
  }
  return base64_encode(bytes);
}

inline std::vector<double> decode_float32_le(std::string_view b64, const std::string& field = "base64") {
  const std::string bytes = base64_decode(b64, field);
  if (bytes.size() % 4 != 0) throw ProtocolError("field '" + field + "': byte count is not a multiple of 4");
  std::vector<double> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= std::uint32_t(std::uint8_t(bytes[4 * i + b])) << (8 * b);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash

  static Endpoint parse(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos || url.substr(0, scheme) != "http")
      throw ParameterError("scorer URL must start with http:// (got '" + url + "')");
    const auto slash = url.find('/', scheme + 3);
    Endpoint e;
    e.origin = url.substr(0, slash);
    if (e.origin.size() <= scheme + 3) throw ParameterError("scorer URL has no host: '" + url + "'");
    if (slash != std::string::npos) e.prefix = url.substr(slash);
    while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
    return e;
  }
};

class RemoteScorer : public Scorer {
 public:
  RemoteScorer(const std::string& url, std::string prompt, int timeout_seconds = 120, int attempts = 3)
      : endpoint_(Endpoint::parse(url)), prompt_(std::move(prompt)), timeout_(timeout_seconds), attempts_(attempts) {
    if (attempts_ < 1) throw ParameterError("remote scorer: attempts must be >= 1");
  }

  ScoreResult score(const std::vector<Image>& images, const std::vector<int>&, bool want_grad) override {
    if (images.empty()) throw ParameterError("remote scorer: no images");
    const int w = images[0].width, h = images[0].height;
    nlohmann::json req;
    req["prompt"] = prompt_;
    req["width"] = w;
    req["height"] = h;
    req["want_grad"] = want_grad;
    req["images"] = nlohmann::json::array();
    for (const Image& img : images) {
      if (img.width != w || img.height != h) throw ParameterError("remote scorer: images in a batch must share one size");
      req["images"].push_back(encode_float32_le(img.rgb));
    }
    const nlohmann::json resp = post("/v1/score", req);
    return parse_score(resp, images.size(), std::size_t(w) * h * 3, want_grad);
  }

  std::vector<double> encode_text() {
    const nlohmann::json resp = post("/v1/encode_text", nlohmann::json{{"prompt", prompt_}});
    if (!resp.contains("embedding") || !resp["embedding"].is_array())
      throw ProtocolError("response field 'embedding' missing or not an array");
    std::vector<double> e;
    for (const auto& x : resp["embedding"]) {
      if (!x.is_number()) throw ProtocolError("response field 'embedding' contains a non-number");
      e.push_back(x.get<double>());
    }
    return e;
  }

  std::string id() const override { return "remote:" + endpoint_.origin + endpoint_.prefix; }

  // Validates a decoded /v1/score response.
  static ScoreResult parse_score(const nlohmann::json& resp, std::size_t count, std::size_t values_per_image,
                                 bool want_grad) {
    if (!resp.is_object()) throw ProtocolError("response body is not a JSON object");
    if (!resp.contains("loss") || !resp["loss"].is_number()) throw ProtocolError("response field 'loss' missing or not a number");
    ScoreResult r;
    r.loss = resp["loss"].get<double>();
    if (!std::isfinite(r.loss)) throw ProtocolError("response field 'loss' is not finite");
    if (resp.contains("similarities")) {
      const auto& s = resp["similarities"];
      if (!s.is_array() || s.size() != count)
        throw ProtocolError("response field 'similarities' must be an array of " + std::to_string(count) + " numbers");
      for (const auto& x : s) {
        if (!x.is_number()) throw ProtocolError("response field 'similarities' contains a non-number");
        r.similarities.push_back(x.get<double>());
      }
    }
    if (!want_grad) return r;
    if (!resp.contains("grads") || !resp["grads"].is_array()) throw ProtocolError("response field 'grads' missing or not an array");
    const auto& g = resp["grads"];
    if (g.size() != count)
      throw ProtocolError("response field 'grads' has " + std::to_string(g.size()) + " entries, expected " +
                          std::to_string(count));
    for (std::size_t k = 0; k < count; ++k) {
      const std::string field = "grads[" + std::to_string(k) + "]";
      if (!g[k].is_string()) throw ProtocolError("response field '" + field + "' is not a string");
      auto values = decode_float32_le(g[k].get<std::string>(), field);
      if (values.size() != values_per_image)
        throw ProtocolError("response field '" + field + "' has " + std::to_string(values.size()) + " values, expected " +
                            std::to_string(values_per_image));
      for (double v : values)
        if (!std::isfinite(v)) throw ProtocolError("response field '" + field + "' contains non-finite values");
      r.grad_images.push_back(std::move(values));
    }
    return r;
  }

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body) {
    httplib::Client cli(endpoint_.origin);
    cli.set_connection_timeout(timeout_, 0);
    cli.set_read_timeout(timeout_, 0);
    cli.set_write_timeout(timeout_, 0);
    const std::string payload = body.dump();
    std::string last_error;
    for (int attempt = 0; attempt < attempts_; ++attempt) {
      auto res = cli.Post(endpoint_.prefix + path, payload, "application/json");
      if (!res) {
        last_error = httplib::to_string(res.error());
        continue;
      }
      if (res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
        continue;
      }
      if (res->status != 200)
        throw ProtocolError("POST " + path + " returned HTTP " + std::to_string(res->status) + ": " + res->body);
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception&) {
        throw ProtocolError("response body of " + path + " is not valid JSON");
      }
    }
    throw TransportError("POST " + endpoint_.origin + endpoint_.prefix + path + " failed after " +
                         std::to_string(attempts_) + " attempt(s): " + last_error);
  }

  Endpoint endpoint_;
  std::string prompt_;
  int timeout_;
  int attempts_;
};

}  // namespace meshforge
