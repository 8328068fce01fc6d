#pragma once

// Live backend for chat-completion style HTTP(S) endpoints.

#include <cstdlib>
#include <string>
#include <utility>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include "refqual/gateway.hpp"

namespace refqual {

struct HttpBackendConfig {
    std::string endpoint_url = "https://api.openai.com/v1/chat/completions";
    std::string api_key_env = "OPENAI_API_KEY";
    int timeout_seconds = 120;
};

struct ParsedUrl {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

inline ParsedUrl split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw FatalBackendError("endpoint URL lacks a scheme: " + url);
    const auto scheme = url.substr(0, scheme_end);
    if (scheme != "http" && scheme != "https") throw FatalBackendError("unsupported endpoint scheme: " + scheme);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

/// Sends {"model", "messages":[system, user], ...params} and returns
/// choices[0].message.content. 401/403 are fatal, 408/429/5xx and transport errors
/// are transient, any other non-2xx status is a permanent per-request failure.
class HttpChatBackend : public ScoringBackend {
public:
    explicit HttpChatBackend(HttpBackendConfig config) : config_(std::move(config)), url_(split_url(config_.endpoint_url)) {
        const char* key = std::getenv(config_.api_key_env.c_str());
        if (!key || !*key) throw FatalBackendError("environment variable " + config_.api_key_env + " is not set");
        api_key_ = key;
    }

    std::string name() const override { return "live"; }

    static json request_body(const ScoreRequest& request, const ModelSpec& model) {
        json body = model.params.is_object() ? model.params : json::object();
        body["model"] = model.model_id;
        body["messages"] = json::array({{{"role", "system"}, {"content", request.prompt.system_text}},
                                        {{"role", "user"}, {"content", request.prompt.user_text}}});
        return body;
    }

    BackendReply send(const ScoreRequest& request, const ModelSpec& model) override {
        httplib::Client client(url_.origin);
        client.set_connection_timeout(config_.timeout_seconds, 0);
        client.set_read_timeout(config_.timeout_seconds, 0);
        client.set_write_timeout(config_.timeout_seconds, 0);
        const httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
        const auto res = client.Post(url_.path, headers, request_body(request, model).dump(), "application/json");
        if (!res) throw TransientBackendError("transport error: " + httplib::to_string(res.error()));
        const int status = res->status;
        if (status == 401 || status == 403) throw FatalBackendError("authentication rejected (HTTP " + std::to_string(status) + ")");
        if (status == 408 || status == 429 || status >= 500)
            throw TransientBackendError("HTTP " + std::to_string(status));
        if (status < 200 || status >= 300)
            throw PermanentBackendError("HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200));

        const auto j = json::parse(res->body, nullptr, false);
        if (j.is_discarded()) throw TransientBackendError("response is not JSON");
        try {
            BackendReply reply;
            reply.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
            reply.meta["backend"] = "live";
            if (j.contains("model") && j["model"].is_string()) reply.meta["served_model"] = j["model"];
            if (j.contains("id") && j["id"].is_string()) reply.meta["response_id"] = j["id"];
            return reply;
        } catch (const json::exception& e) {
            throw PermanentBackendError(std::string("unexpected response shape: ") + e.what());
        }
    }

private:
    HttpBackendConfig config_;
    ParsedUrl url_;
    std::string api_key_;
};

}  // namespace refqual
