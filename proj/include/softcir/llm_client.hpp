#pragma once

/// OpenAI-compatible chat-completions transport.
///
/// Retries HTTP 429, 5xx, timeouts and connection failures with exponential
/// backoff and full jitter: before retry n (n = 0, 1, ...) the client sleeps a
/// uniform draw from [0, backoff_base * backoff_factor^n]. 401/403 fail at
/// once. In-flight requests are capped at max_concurrent per client.

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <random>
#include <string>

#include "json.hpp"
#include "softcir/provider.hpp"

namespace softcir {

struct ProviderConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-4o";
  double temperature = 0.0;
  int max_retries = 3;
  std::chrono::milliseconds timeout{60000};
  int max_concurrent = 4;
  std::string api_key;

  std::chrono::milliseconds backoff_base{1000};
  double backoff_factor = 2.0;
  std::uint64_t jitter_seed = 0;  // 0 = seed from std::random_device

  /// USD per million tokens; defaults are GPT-4o list prices.
  double input_cost_per_mtok = 2.50;
  double output_cost_per_mtok = 10.00;

  /// Never attach images; inline captions instead.
  bool text_only = false;

  /// Fills api_key / base_url from SOFT_LLM_API_KEY / SOFT_LLM_BASE_URL when set.
  ProviderConfig& apply_environment();
  /// Throws InvalidArgument.
  void validate() const;
};

class HttpProvider : public Provider {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit HttpProvider(ProviderConfig cfg, Sleeper sleeper = {});

  ChatResult chat(const PromptPayload& payload) override;
  std::string model_name() const override { return cfg_.model; }
  const ProviderConfig& config() const noexcept { return cfg_; }

  /// The JSON request body for a payload.
  nlohmann::json request_body(const PromptPayload& payload, bool text_only) const;

 private:
  struct Attempt {
    int status = 0;  // 0 when no HTTP response arrived
    std::string body;
    std::string transport_error;
    bool timed_out = false;
  };

  Attempt post_once(const std::string& body);
  std::chrono::milliseconds backoff_delay(int retry);
  void acquire_slot();
  void release_slot();

  ProviderConfig cfg_;
  Sleeper sleeper_;
  std::string host_;
  std::string path_prefix_;

  std::mutex slot_mutex_;
  std::condition_variable slot_cv_;
  int in_flight_ = 0;

  std::mutex rng_mutex_;
  std::mt19937_64 rng_;
};

/// One-shot convenience: builds a client, sends one payload, returns the text.
std::string llm_chat(const ProviderConfig& cfg, const PromptPayload& payload);

/// data:<mime>;base64,<...> for an image file.
std::string image_data_url(const std::filesystem::path& path);

}  // namespace softcir
