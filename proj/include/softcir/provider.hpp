#pragma once

/// Chat provider abstraction shared by constraint generation and the
/// multi-target pipeline, plus a scripted in-process provider for tests and
/// offline runs.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace softcir {

/// An image handed to the model. `path` may be empty when only a caption is
/// available; providers then inline the caption as text.
struct ImageRef {
  std::string id;
  std::filesystem::path path;
  std::string caption;
};

/// Sent as one user message: [text, images, trailer], or [images, text,
/// trailer] when images_first is set.
struct PromptPayload {
  std::string text;
  std::vector<ImageRef> images;
  /// Output-format instructions placed after the images.
  std::string trailer;
  bool images_first = false;
  std::string prompt_version;

  /// text + trailer, as seen by rule matching in the scripted provider.
  std::string all_text() const { return trailer.empty() ? text : text + "\n" + trailer; }
};

struct Usage {
  long prompt_tokens = 0;
  long completion_tokens = 0;
  double cost_usd = 0.0;
};

struct UsageTotals {
  long calls = 0;
  long prompt_tokens = 0;
  long completion_tokens = 0;
  double cost_usd = 0.0;
};

struct ChatResult {
  std::string content;
  Usage usage;
  bool text_only_fallback = false;
};

class Provider {
 public:
  virtual ~Provider() = default;

  virtual ChatResult chat(const PromptPayload& payload) = 0;
  virtual std::string model_name() const = 0;

  UsageTotals usage_totals() const;

 protected:
  void record_usage(const Usage& usage);

 private:
  mutable std::mutex usage_mutex_;
  UsageTotals totals_;
};

/// Replies from a rule table: the first rule whose `contains` text occurs in
/// the prompt answers. A rule with several responses plays them in order and
/// then repeats the last one. Tracks call counts and peak concurrency.
class ScriptedProvider : public Provider {
 public:
  struct Rule {
    std::string contains;
    std::vector<std::string> responses;
    std::size_t served = 0;
  };

  explicit ScriptedProvider(std::string model = "scripted-mock");

  ScriptedProvider& on(std::string contains, std::vector<std::string> responses);
  ScriptedProvider& otherwise(std::string response);
  /// Each call sleeps this long while counted as in flight.
  ScriptedProvider& with_latency(std::chrono::milliseconds latency);
  /// Overrides all rules.
  ScriptedProvider& with_handler(std::function<std::string(const PromptPayload&)> handler);

  /// JSON: {"model": "...", "rules": [{"contains": "...", "response": "..." |
  /// "responses": [...]}], "default": "..."}
  static std::unique_ptr<ScriptedProvider> from_json(const nlohmann::json& script);
  static std::unique_ptr<ScriptedProvider> from_file(const std::filesystem::path& path);

  ChatResult chat(const PromptPayload& payload) override;
  std::string model_name() const override { return model_; }

  long calls() const noexcept { return calls_.load(); }
  int peak_in_flight() const noexcept { return peak_in_flight_.load(); }
  const std::vector<std::string>& prompts() const noexcept { return prompts_; }

 private:
  std::string model_;
  std::vector<Rule> rules_;
  std::optional<std::string> fallback_;
  std::function<std::string(const PromptPayload&)> handler_;
  std::chrono::milliseconds latency_{0};
  std::mutex mutex_;
  std::vector<std::string> prompts_;
  std::atomic<long> calls_{0};
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_in_flight_{0};
};

/// Finds the first JSON object in free-form model output. Markdown code
/// fences and surrounding prose are tolerated. Never throws.
std::optional<nlohmann::json> extract_json_object(std::string_view raw);

/// Strips a surrounding ``` fence (with optional language tag) and whitespace.
std::string strip_code_fence(std::string_view raw);

std::string trim(std::string_view text);

}  // namespace softcir
