#pragma once

#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "labwatch/detail/base64.hpp"
#include "labwatch/detail/sha256.hpp"
#include "labwatch/error.hpp"
#include "labwatch/image.hpp"
#include "labwatch/prompt.hpp"

namespace labwatch {

// A camera observation, preprocessed and ready for the wire.
struct Observation {
  std::string point_id;
  std::string image_ref;  // source path, empty for in-memory observations
  std::string jpeg;       // canonical 640x480 RGB JPEG bytes
  std::string digest;     // sha256 of jpeg
  int width = kTargetWidth;
  int height = kTargetHeight;
  std::optional<std::string> device;
  std::optional<std::string> viewpoint;
};

inline Observation make_observation(std::string_view raw_bytes, std::string point_id,
                                    std::string image_ref = "") {
  Observation obs;
  obs.point_id = std::move(point_id);
  obs.image_ref = std::move(image_ref);
  obs.jpeg = preprocess_image(raw_bytes);
  obs.digest = detail::sha256_hex(obs.jpeg);
  return obs;
}

inline Observation load_observation(const std::filesystem::path& path,
                                    std::string point_id) {
  return make_observation(read_text_file(path), std::move(point_id), path.string());
}

struct ProviderConfig {
  std::string endpoint_url = "https://api.openai.com/v1/chat/completions";
  std::string model_name = "gpt-4o";
  double temperature = 0.0;  // deterministic by default
  int max_output_tokens = 1024;
  double timeout_s = 120.0;
  int max_retries = 2;
  double backoff_base_s = 0.5;
  std::string credential_env_name = "LAB_ANOMALY_API_KEY";
};

struct RawResponse {
  std::string text;
  std::string model_id;
  double latency_s = 0.0;
  bool from_cache = false;
  std::string request_hash;
};

// What a transport sees for one query. point_id and level ride along only so
// scripted mocks can key on them; the live wire format ignores both.
struct ProviderRequest {
  std::string prompt_text;
  std::string prompt_hash;
  std::string image_jpeg;
  std::string image_digest;
  std::string model;
  double temperature = 0.0;
  int max_output_tokens = 0;
  std::string point_id;
  int level = 0;
};

struct ProviderResult {
  std::string text;
  std::string model_id;
  double latency_s = 0.0;
};

class Provider {
 public:
  virtual ~Provider() = default;
  virtual ProviderResult complete(const ProviderRequest& request) = 0;
};

// Cache key: pure function of the query content. Anything that changes the
// semantics of the request changes the hash.
inline std::string request_hash(std::string_view prompt_hash, std::string_view image_digest,
                                std::string_view model, double temperature) {
  char temp[64];
  std::snprintf(temp, sizeof(temp), "%.17g", temperature);
  detail::Sha256 h;
  h.update("prompt:");
  h.update(prompt_hash);
  h.update("|image:");
  h.update(image_digest);
  h.update("|model:");
  h.update(model);
  h.update("|temperature:");
  h.update(std::string_view(temp));
  return detail::to_hex(h.digest());
}

// ---------------------------------------------------------------------------
// Scripted offline provider. Rules are checked in order, first match wins;
// a rule matches when every condition it carries holds. Unmatched requests
// get the default text when one is configured, otherwise an error.
// ---------------------------------------------------------------------------

struct MockRule {
  std::optional<std::string> point_id;
  std::optional<int> level;
  std::optional<std::string> prompt_contains;
  std::optional<std::string> image_digest;
  bool fail = false;  // simulate a transient provider failure
  std::string respond;
};

class MockProvider : public Provider {
 public:
  MockProvider() : default_text_("Conclusion: uncertain.") {}
  MockProvider(std::vector<MockRule> rules, std::optional<std::string> default_text)
      : rules_(std::move(rules)), default_text_(std::move(default_text)) {}

  // Script document: {"default": "...", "rules": [{"point_id": ..,
  // "level": .., "prompt_contains": .., "image_digest": .., "fail": ..,
  // "respond": ..}]}. Omit "default" to make unmatched requests an error.
  static std::shared_ptr<MockProvider> from_script(const std::string& script_json) {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(script_json);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::Syntax, std::string("malformed mock script: ") + e.what());
    }
    if (!doc.is_object()) fail(ErrorKind::Syntax, "mock script must be a JSON object");
    std::optional<std::string> default_text;
    std::vector<MockRule> rules;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      if (it.key() == "default") {
        default_text = it->get<std::string>();
      } else if (it.key() == "rules") {
        for (const auto& r : *it) {
          MockRule rule;
          for (auto rit = r.begin(); rit != r.end(); ++rit) {
            if (rit.key() == "point_id")
              rule.point_id = rit->get<std::string>();
            else if (rit.key() == "level")
              rule.level = rit->get<int>();
            else if (rit.key() == "prompt_contains")
              rule.prompt_contains = rit->get<std::string>();
            else if (rit.key() == "image_digest")
              rule.image_digest = rit->get<std::string>();
            else if (rit.key() == "fail")
              rule.fail = rit->get<bool>();
            else if (rit.key() == "respond")
              rule.respond = rit->get<std::string>();
            else
              fail(ErrorKind::Config, "unknown key \"" + rit.key() + "\" in mock rule");
          }
          rules.push_back(std::move(rule));
        }
      } else {
        fail(ErrorKind::Config, "unknown key \"" + it.key() + "\" in mock script");
      }
    }
    return std::make_shared<MockProvider>(std::move(rules), std::move(default_text));
  }

  ProviderResult complete(const ProviderRequest& request) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    for (const auto& rule : rules_) {
      if (rule.point_id && *rule.point_id != request.point_id) continue;
      if (rule.level && *rule.level != request.level) continue;
      if (rule.prompt_contains &&
          !detail::contains(request.prompt_text, *rule.prompt_contains))
        continue;
      if (rule.image_digest && *rule.image_digest != request.image_digest) continue;
      if (rule.fail) fail(ErrorKind::Provider, "scripted provider failure");
      return {rule.respond, "mock", 0.0};
    }
    if (default_text_) return {*default_text_, "mock", 0.0};
    fail(ErrorKind::Provider, "no mock rule matched request for point \"" +
                                  request.point_id + "\" at level " +
                                  std::to_string(request.level));
  }

  int calls() const { return calls_.load(std::memory_order_relaxed); }
  void reset_calls() { calls_.store(0, std::memory_order_relaxed); }

 private:
  std::vector<MockRule> rules_;
  std::optional<std::string> default_text_;
  std::atomic<int> calls_{0};
};

// Always fails with the given kind; for exercising retry behavior.
class FailingProvider : public Provider {
 public:
  explicit FailingProvider(ErrorKind kind = ErrorKind::Provider) : kind_(kind) {}

  ProviderResult complete(const ProviderRequest&) override {
    attempts_.fetch_add(1, std::memory_order_relaxed);
    fail(kind_, "injected failure");
  }

  int attempts() const { return attempts_.load(std::memory_order_relaxed); }

 private:
  ErrorKind kind_;
  std::atomic<int> attempts_{0};
};

// ---------------------------------------------------------------------------
// Live transport: OpenAI-compatible chat completion with one text part and
// one base64 image part in a single user message.
// ---------------------------------------------------------------------------

namespace detail {

struct SplitUrl {
  std::string base;  // scheme://host[:port]
  std::string path;  // /path or "/"
};

inline SplitUrl split_url(const std::string& url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    fail(ErrorKind::Config, "endpoint url missing scheme: " + url);
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace detail

// Chat-completion request body: one user message holding a text part and a
// base64 JPEG data-URL image part.
inline nlohmann::ordered_json build_chat_request_body(const ProviderRequest& request) {
  nlohmann::ordered_json body;
  body["model"] = request.model;
  body["temperature"] = request.temperature;
  body["max_tokens"] = request.max_output_tokens;
  body["messages"] = nlohmann::ordered_json::array(
      {{{"role", "user"},
        {"content",
         nlohmann::ordered_json::array(
             {{{"type", "text"}, {"text", request.prompt_text}},
              {{"type", "image_url"},
               {"image_url",
                {{"url", "data:image/jpeg;base64," +
                             detail::base64_encode(request.image_jpeg)}}}}})}}});
  return body;
}

class HttpProvider : public Provider {
 public:
  explicit HttpProvider(ProviderConfig config) : config_(std::move(config)) {}

  ProviderResult complete(const ProviderRequest& request) override {
    nlohmann::ordered_json body = build_chat_request_body(request);

    detail::SplitUrl url = detail::split_url(config_.endpoint_url);
    httplib::Client client(url.base);
    auto seconds = static_cast<time_t>(config_.timeout_s);
    auto micros = static_cast<time_t>((config_.timeout_s - seconds) * 1e6);
    client.set_connection_timeout(seconds, micros);
    client.set_read_timeout(seconds, micros);
    client.set_write_timeout(seconds, micros);

    httplib::Headers headers;
    if (const char* key = std::getenv(config_.credential_env_name.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

    auto start = std::chrono::steady_clock::now();
    httplib::Result res = client.Post(url.path, headers, body.dump(), "application/json");
    double latency =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (!res) {
      if (res.error() == httplib::Error::ConnectionTimeout ||
          res.error() == httplib::Error::Read || res.error() == httplib::Error::Write)
        fail(ErrorKind::Timeout, "request timed out: " + httplib::to_string(res.error()));
      fail(ErrorKind::Network, "transport failure: " + httplib::to_string(res.error()));
    }
    if (res->status == 401 || res->status == 403)
      fail(ErrorKind::Auth, "authentication rejected (" + std::to_string(res->status) +
                                "); check $" + config_.credential_env_name);
    if (res->status == 408 || res->status == 429 || res->status >= 500)
      fail(ErrorKind::Provider,
           "provider error " + std::to_string(res->status) + ": " + error_message(res->body));
    if (res->status != 200)
      fail(ErrorKind::Config,
           "request rejected " + std::to_string(res->status) + ": " + error_message(res->body));

    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error&) {
      fail(ErrorKind::Provider, "provider returned unparseable body");
    }
    if (doc.contains("error"))
      fail(ErrorKind::Provider, "provider error payload: " + error_message(res->body));
    if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty())
      fail(ErrorKind::Provider, "provider response has no choices");
    const auto& message = doc["choices"][0]["message"];
    std::string text = message.value("content", std::string());
    if (text.empty()) fail(ErrorKind::Provider, "provider returned empty response text");
    return {std::move(text), doc.value("model", request.model), latency};
  }

 private:
  static std::string error_message(const std::string& body) {
    auto doc = nlohmann::json::parse(body, nullptr, false);
    if (doc.is_object() && doc.contains("error")) {
      const auto& err = doc["error"];
      if (err.is_object() && err.contains("message") && err["message"].is_string())
        return err["message"].get<std::string>();
      if (err.is_string()) return err.get<std::string>();
    }
    return body.size() > 200 ? body.substr(0, 200) + "..." : body;
  }

  ProviderConfig config_;
};

// ---------------------------------------------------------------------------
// Content-addressed response cache: <dir>/<first two hex>/<hash>.json.
// Writes go through a temp file and an atomic rename, so concurrent writers
// of the same key cannot interleave and readers never see partial files.
// ---------------------------------------------------------------------------

class ResponseCache {
 public:
  explicit ResponseCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  std::optional<RawResponse> get(const std::string& hash) const {
    std::filesystem::path path = entry_path(hash);
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    std::string text((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
    auto doc = nlohmann::json::parse(text, nullptr, false);
    if (!doc.is_object() || doc.value("request_hash", std::string()) != hash)
      return std::nullopt;  // corrupt or foreign entry; treat as a miss
    RawResponse response;
    response.text = doc.value("text", std::string());
    response.model_id = doc.value("model_id", std::string());
    response.request_hash = hash;
    response.from_cache = true;
    response.latency_s = 0.0;
    return response;
  }

  void put(const RawResponse& response) const {
    std::filesystem::path path = entry_path(response.request_hash);
    std::filesystem::create_directories(path.parent_path());
    nlohmann::ordered_json doc;
    doc["request_hash"] = response.request_hash;
    doc["text"] = response.text;
    doc["model_id"] = response.model_id;
    doc["latency_s"] = response.latency_s;
    static std::atomic<uint64_t> counter{0};
    std::filesystem::path temp =
        path.parent_path() /
        (path.filename().string() + ".tmp" +
         std::to_string(counter.fetch_add(1, std::memory_order_relaxed)));
    {
      std::ofstream out(temp, std::ios::binary | std::ios::trunc);
      if (!out) fail(ErrorKind::Io, "cannot write cache entry: " + temp.string());
      out << doc.dump(2) << "\n";
    }
    std::filesystem::rename(temp, path);
  }

  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path entry_path(const std::string& hash) const {
    return dir_ / hash.substr(0, 2) / (hash + ".json");
  }

  std::filesystem::path dir_;
};

// ---------------------------------------------------------------------------
// Client: cache lookup, bounded retries with exponential backoff, and the
// invariant that a successful response always carries non-empty text.
// ---------------------------------------------------------------------------

class VlmClient {
 public:
  VlmClient(ProviderConfig config, std::shared_ptr<Provider> provider,
            std::optional<std::filesystem::path> cache_dir = std::nullopt)
      : config_(std::move(config)), provider_(std::move(provider)) {
    if (config_.temperature < 0) fail(ErrorKind::Config, "temperature must be >= 0");
    if (config_.max_output_tokens <= 0)
      fail(ErrorKind::Config, "max_output_tokens must be positive");
    if (config_.timeout_s <= 0) fail(ErrorKind::Config, "timeout must be positive");
    if (config_.max_retries < 0) fail(ErrorKind::Config, "max_retries must be >= 0");
    if (!provider_) fail(ErrorKind::Config, "provider handle is required");
    if (cache_dir) cache_.emplace(*cache_dir);
  }

  const ProviderConfig& config() const { return config_; }

  RawResponse judge_observation(const PromptBundle& bundle, const Observation& obs) {
    std::string hash = request_hash(bundle.content_hash, obs.digest, config_.model_name,
                                    config_.temperature);
    if (cache_) {
      if (auto hit = cache_->get(hash)) return *hit;
    }

    ProviderRequest request{bundle.rendered, bundle.content_hash,     obs.jpeg,
                            obs.digest,      config_.model_name,      config_.temperature,
                            config_.max_output_tokens, obs.point_id,  bundle.level.value()};

    ProviderResult result;
    int attempt = 0;
    for (;;) {
      try {
        result = provider_->complete(request);
        break;
      } catch (const Error& e) {
        if (!e.retryable() || attempt >= config_.max_retries) throw;
        double delay = config_.backoff_base_s * static_cast<double>(1 << attempt);
        if (delay > 0)
          std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        ++attempt;
      }
    }
    if (result.text.empty())
      fail(ErrorKind::Provider, "provider returned empty response text");

    RawResponse response;
    response.text = std::move(result.text);
    response.model_id = std::move(result.model_id);
    response.latency_s = result.latency_s;
    response.from_cache = false;
    response.request_hash = hash;
    if (cache_) cache_->put(response);
    return response;
  }

 private:
  ProviderConfig config_;
  std::shared_ptr<Provider> provider_;
  std::optional<ResponseCache> cache_;
};

}  // namespace labwatch
