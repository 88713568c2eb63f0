#pragma once

// HTTP backend for the gateway. Included by gateway.hpp after the backend
// interface is declared; not meant to be included directly.

#include <httplib.h>

#include <cmath>
#include <cstdlib>
#include <string>

namespace sceneprobe::gw::detail {

class RemoteBackend : public Backend {
 public:
  explicit RemoteBackend(const BackendProfile& profile) : profile_(profile) {
    split_url(profile_.endpoint_url, base_, path_);
  }

  BackendKind kind() const override { return BackendKind::remote; }

  std::string invoke(const RawRequest& req) override {
    httplib::Client client(base_);
    client.set_connection_timeout(std::chrono::duration<double>(profile_.timeout_s));
    client.set_read_timeout(std::chrono::duration<double>(profile_.timeout_s));

    httplib::Headers headers;
    if (!profile_.api_key_env.empty()) {
      // Keys come from the environment only, never from config files.
      if (const char* key = std::getenv(profile_.api_key_env.c_str())) {
        headers.emplace("Authorization", std::string("Bearer ") + key);
      }
    }

    auto res = client.Post(path_, headers, build_body(req), "application/json");
    if (!res) {
      throw GatewayError(CallOutcome::transport_error,
                         "connection to " + profile_.endpoint_url + " failed: " +
                             httplib::to_string(res.error()));
    }
    if (res->status == 429) {
      double retry_after = 0.0;
      if (res->has_header("Retry-After")) {
        retry_after = std::atof(res->get_header_value("Retry-After").c_str());
      }
      throw GatewayError(CallOutcome::rate_limited, "rate limited by provider", retry_after);
    }
    if (res->status >= 500 || res->status == 408) {
      throw GatewayError(CallOutcome::transport_error,
                         "provider returned status " + std::to_string(res->status));
    }
    if (res->status != 200) {
      throw GatewayError(CallOutcome::malformed,
                         "provider returned status " + std::to_string(res->status));
    }
    return extract_payload(req, res->body);
  }

 private:
  static void split_url(const std::string& url, std::string& base, std::string& path) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint_url needs a scheme: " + url);
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      base = url;
      path = "/";
    } else {
      base = url.substr(0, path_start);
      path = url.substr(path_start);
    }
  }

  std::string build_body(const RawRequest& req) const {
    const json& c = req.canonical;
    if (profile_.request_template.empty()) {
      return default_body(req).dump();
    }
    // Template substitution: {{key}} placeholders get JSON-escaped values, so
    // templates place them inside string literals or bare for numbers.
    std::string body = profile_.request_template;
    auto escaped = [](const json& v) {
      if (v.is_string()) {
        std::string d = json(v.get<std::string>()).dump();
        return d.substr(1, d.size() - 2);  // strip surrounding quotes
      }
      return v.dump();
    };
    std::map<std::string, std::string> vars;
    vars["model"] = profile_.model_name;
    vars["stage"] = req.stage;
    vars["temperature"] = json(profile_.decoding.temperature).dump();
    vars["top_p"] = json(profile_.decoding.top_p).dump();
    vars["max_tokens"] = json(profile_.decoding.max_output_tokens).dump();
    if (c.contains("system")) vars["system"] = escaped(c.at("system"));
    if (c.contains("messages")) {
      std::string joined;
      for (const auto& m : c.at("messages")) {
        if (!joined.empty()) joined += "\n";
        joined += m.get<std::string>();
      }
      vars["user"] = escaped(json(joined));
      vars["messages_json"] = c.at("messages").dump();
    }
    if (c.contains("payload")) vars["payload"] = c.at("payload").dump();
    if (c.contains("text")) vars["text"] = escaped(c.at("text"));
    if (c.contains("instruction")) vars["instruction"] = escaped(c.at("instruction"));
    if (c.contains("plan")) vars["plan"] = escaped(c.at("plan"));
    if (c.contains("image")) {
      vars["image_digest"] = c.at("image").value("digest", "");
      vars["sidecar"] = escaped(json(c.at("image").value("sidecar", "")));
    }
    for (const auto& [key, value] : vars) {
      const std::string needle = "{{" + key + "}}";
      std::size_t pos = 0;
      while ((pos = body.find(needle, pos)) != std::string::npos) {
        body.replace(pos, needle.size(), value);
        pos += value.size();
      }
    }
    return body;
  }

  json default_body(const RawRequest& req) const {
    const json& c = req.canonical;
    if (req.role == Role::embedding) {
      return json{{"model", profile_.model_name}, {"input", c.value("text", "")}};
    }
    std::string user;
    for (const auto& m : c.value("messages", json::array())) {
      if (!user.empty()) user += "\n";
      user += m.get<std::string>();
    }
    json body{{"model", profile_.model_name},
              {"temperature", profile_.decoding.temperature},
              {"top_p", profile_.decoding.top_p},
              {"max_tokens", profile_.decoding.max_output_tokens}};
    json messages = json::array();
    if (c.contains("system") && !c.at("system").get<std::string>().empty()) {
      messages.push_back({{"role", "system"}, {"content", c.at("system")}});
    }
    messages.push_back({{"role", "user"}, {"content", user}});
    body["messages"] = messages;
    if (c.contains("image")) body["image"] = c.at("image");
    if (c.contains("instruction")) body["instruction"] = c.at("instruction");
    if (c.contains("plan")) body["plan"] = c.at("plan");
    return body;
  }

  std::string extract_payload(const RawRequest& req, const std::string& body) const {
    json parsed = json::parse(body, nullptr, false);
    if (parsed.is_discarded()) {
      throw GatewayError(CallOutcome::malformed, "provider returned non-JSON body");
    }
    try {
      if (req.role == Role::embedding) {
        auto v = parsed.at(json::json_pointer(profile_.response_embedding_pointer))
                     .get<std::vector<double>>();
        double norm = 0.0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (v.empty() || norm == 0.0) {
          throw GatewayError(CallOutcome::malformed, "provider returned an empty embedding");
        }
        json out = json::array();
        for (double x : v) out.push_back(x / norm);
        return out.dump();
      }
      return parsed.at(json::json_pointer(profile_.response_text_pointer)).get<std::string>();
    } catch (const json::exception&) {
      throw GatewayError(CallOutcome::malformed,
                         "provider response is missing the configured field");
    }
  }

  BackendProfile profile_;
  std::string base_;
  std::string path_;
};

}  // namespace sceneprobe::gw::detail
