#include "softcir/llm_client.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <openssl/evp.h>

#include "httplib.h"
#include "softcir/dataset.hpp"
#include "softcir/error.hpp"

namespace softcir {
namespace {

using nlohmann::json;

std::string mime_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return "image/png";
  if (ext == ".webp") return "image/webp";
  if (ext == ".gif") return "image/gif";
  return "image/jpeg";
}

bool retryable(int status) { return status == 429 || (status >= 500 && status <= 599); }

std::string snippet(const std::string& body) { return body.size() <= 300 ? body : body.substr(0, 300) + "..."; }

}  // namespace

ProviderConfig& ProviderConfig::apply_environment() {
  if (const char* key = std::getenv("SOFT_LLM_API_KEY"); key && *key) api_key = key;
  if (const char* url = std::getenv("SOFT_LLM_BASE_URL"); url && *url) base_url = url;
  return *this;
}

void ProviderConfig::validate() const {
  if (base_url.find("://") == std::string::npos) {
    throw Error(ErrorKind::InvalidArgument, "base URL '" + base_url + "' has no scheme");
  }
  if (model.empty()) throw Error(ErrorKind::InvalidArgument, "model name is empty");
  if (max_retries < 0) throw Error(ErrorKind::InvalidArgument, "max retries must be >= 0");
  if (max_concurrent < 1) throw Error(ErrorKind::InvalidArgument, "max concurrent requests must be >= 1");
  if (timeout.count() <= 0) throw Error(ErrorKind::InvalidArgument, "timeout must be positive");
  if (!std::isfinite(temperature) || temperature < 0.0) throw Error(ErrorKind::InvalidArgument, "bad temperature");
}

std::string image_data_url(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::string encoded(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(encoded.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  encoded.resize(static_cast<std::size_t>(n));
  return "data:" + mime_for(path) + ";base64," + encoded;
}

HttpProvider::HttpProvider(ProviderConfig cfg, Sleeper sleeper) : cfg_(std::move(cfg)), sleeper_(std::move(sleeper)) {
  cfg_.validate();
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  const auto scheme_end = cfg_.base_url.find("://") + 3;
  const auto path_start = cfg_.base_url.find('/', scheme_end);
  host_ = cfg_.base_url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : cfg_.base_url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
  rng_.seed(cfg_.jitter_seed != 0 ? cfg_.jitter_seed : std::random_device{}());
}

json HttpProvider::request_body(const PromptPayload& payload, bool text_only) const {
  json content = json::array();
  auto add_text = [&](const std::string& text) {
    if (!text.empty()) content.push_back({{"type", "text"}, {"text", text}});
  };
  auto add_images = [&] {
    const bool label = payload.images.size() > 1;
    for (const auto& image : payload.images) {
      if (text_only || image.path.empty()) {
        const std::string caption = image.caption.empty() ? "(no description available)" : image.caption;
        add_text("Image " + image.id + " (description): " + caption);
        continue;
      }
      if (label) add_text("Image " + image.id + ":");
      content.push_back({{"type", "image_url"}, {"image_url", {{"url", image_data_url(image.path)}}}});
    }
  };
  if (payload.images_first) {
    add_images();
    add_text(payload.text);
  } else {
    add_text(payload.text);
    add_images();
  }
  add_text(payload.trailer);
  return json{{"model", cfg_.model},
              {"temperature", cfg_.temperature},
              {"messages", json::array({{{"role", "user"}, {"content", content}}})}};
}

HttpProvider::Attempt HttpProvider::post_once(const std::string& body) {
  httplib::Client client(host_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  Attempt attempt;
  auto res = client.Post(path_prefix_ + "/chat/completions", headers, body, "application/json");
  if (!res) {
    const auto err = res.error();
    attempt.timed_out = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout;
    attempt.transport_error = httplib::to_string(err);
    return attempt;
  }
  attempt.status = res->status;
  attempt.body = res->body;
  return attempt;
}

std::chrono::milliseconds HttpProvider::backoff_delay(int retry) {
  const double cap = static_cast<double>(cfg_.backoff_base.count()) * std::pow(cfg_.backoff_factor, retry);
  std::lock_guard lock(rng_mutex_);
  std::uniform_real_distribution<double> jitter(0.0, cap);
  return std::chrono::milliseconds(static_cast<long long>(jitter(rng_)));
}

void HttpProvider::acquire_slot() {
  std::unique_lock lock(slot_mutex_);
  slot_cv_.wait(lock, [&] { return in_flight_ < cfg_.max_concurrent; });
  ++in_flight_;
}

void HttpProvider::release_slot() {
  {
    std::lock_guard lock(slot_mutex_);
    --in_flight_;
  }
  slot_cv_.notify_one();
}

ChatResult HttpProvider::chat(const PromptPayload& payload) {
  if (cfg_.api_key.empty()) throw Error(ErrorKind::AuthError, "no API key (set SOFT_LLM_API_KEY)");

  bool text_only = cfg_.text_only;
  bool fallback_used = text_only && !payload.images.empty();
  std::string body = request_body(payload, text_only).dump();

  Attempt last;
  for (int retry = 0;; ++retry) {
    acquire_slot();
    try {
      last = post_once(body);
    } catch (...) {
      release_slot();
      throw;
    }
    release_slot();

    if (last.status == 401 || last.status == 403) {
      throw Error(ErrorKind::AuthError, "HTTP " + std::to_string(last.status) + ": " + snippet(last.body));
    }
    if (last.status == 200) break;

    const bool has_attachments = std::any_of(payload.images.begin(), payload.images.end(),
                                             [](const ImageRef& i) { return !i.path.empty(); });
    if ((last.status == 400 || last.status == 415 || last.status == 422) && !text_only && has_attachments) {
      // The endpoint rejected image parts; resend once with captions inlined.
      text_only = true;
      fallback_used = true;
      body = request_body(payload, true).dump();
      --retry;
      continue;
    }
    const bool transient = last.status == 0 || retryable(last.status);
    if (!transient) {
      throw Error(ErrorKind::ProviderError, "HTTP " + std::to_string(last.status) + ": " + snippet(last.body));
    }
    if (retry >= cfg_.max_retries) {
      if (last.status == 429) throw Error(ErrorKind::RateLimited, "HTTP 429 after " + std::to_string(retry) + " retries");
      if (last.status == 0 && last.timed_out) throw Error(ErrorKind::Timeout, "request timed out: " + last.transport_error);
      if (last.status == 0) throw Error(ErrorKind::TransportError, last.transport_error);
      throw Error(ErrorKind::TransportError, "HTTP " + std::to_string(last.status) + " after " +
                                                 std::to_string(retry) + " retries: " + snippet(last.body));
    }
    sleeper_(backoff_delay(retry));
  }

  const json reply = json::parse(last.body, nullptr, /*allow_exceptions=*/false);
  ChatResult result;
  result.text_only_fallback = fallback_used;
  try {
    result.content = reply.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::ProviderError, "reply lacks choices[0].message.content: " + snippet(last.body));
  }
  if (reply.contains("usage") && reply.at("usage").is_object()) {
    const auto& u = reply.at("usage");
    result.usage.prompt_tokens = u.value("prompt_tokens", 0L);
    result.usage.completion_tokens = u.value("completion_tokens", 0L);
  }
  result.usage.cost_usd = static_cast<double>(result.usage.prompt_tokens) * cfg_.input_cost_per_mtok / 1e6 +
                          static_cast<double>(result.usage.completion_tokens) * cfg_.output_cost_per_mtok / 1e6;
  record_usage(result.usage);
  return result;
}

std::string llm_chat(const ProviderConfig& cfg, const PromptPayload& payload) {
  HttpProvider provider(cfg);
  return provider.chat(payload).content;
}

}  // namespace softcir
