#include "softcir/provider.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <thread>

#include "softcir/error.hpp"

namespace softcir {

UsageTotals Provider::usage_totals() const {
  std::lock_guard lock(usage_mutex_);
  return totals_;
}

void Provider::record_usage(const Usage& usage) {
  std::lock_guard lock(usage_mutex_);
  ++totals_.calls;
  totals_.prompt_tokens += usage.prompt_tokens;
  totals_.completion_tokens += usage.completion_tokens;
  totals_.cost_usd += usage.cost_usd;
}

ScriptedProvider::ScriptedProvider(std::string model) : model_(std::move(model)) {}

ScriptedProvider& ScriptedProvider::on(std::string contains, std::vector<std::string> responses) {
  if (responses.empty()) throw Error(ErrorKind::InvalidArgument, "scripted rule needs at least one response");
  rules_.push_back({std::move(contains), std::move(responses), 0});
  return *this;
}

ScriptedProvider& ScriptedProvider::otherwise(std::string response) {
  fallback_ = std::move(response);
  return *this;
}

ScriptedProvider& ScriptedProvider::with_latency(std::chrono::milliseconds latency) {
  latency_ = latency;
  return *this;
}

ScriptedProvider& ScriptedProvider::with_handler(std::function<std::string(const PromptPayload&)> handler) {
  handler_ = std::move(handler);
  return *this;
}

std::unique_ptr<ScriptedProvider> ScriptedProvider::from_json(const nlohmann::json& script) {
  try {
    auto provider = std::make_unique<ScriptedProvider>(script.value("model", std::string("scripted-mock")));
    for (const auto& rule : script.value("rules", nlohmann::json::array())) {
      std::vector<std::string> responses;
      if (rule.contains("responses")) {
        responses = rule.at("responses").get<std::vector<std::string>>();
      } else {
        responses.push_back(rule.at("response").get<std::string>());
      }
      provider->on(rule.at("contains").get<std::string>(), std::move(responses));
    }
    if (script.contains("default")) provider->otherwise(script.at("default").get<std::string>());
    return provider;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("scripted provider file: ") + e.what());
  }
}

std::unique_ptr<ScriptedProvider> ScriptedProvider::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::FormatError, "'" + path.string() + "': " + e.what());
  }
}

ChatResult ScriptedProvider::chat(const PromptPayload& payload) {
  const int now = ++in_flight_;
  int peak = peak_in_flight_.load();
  while (now > peak && !peak_in_flight_.compare_exchange_weak(peak, now)) {
  }
  struct Leave {
    std::atomic<int>& counter;
    ~Leave() { --counter; }
  } leave{in_flight_};

  ++calls_;
  if (latency_.count() > 0) std::this_thread::sleep_for(latency_);

  {
    std::lock_guard lock(mutex_);
    prompts_.push_back(payload.all_text());
  }
  std::string content;
  if (handler_) {
    content = handler_(payload);
  } else {
    std::lock_guard lock(mutex_);
    const std::string text = payload.all_text();
    auto rule = std::find_if(rules_.begin(), rules_.end(), [&](const Rule& r) {
      return text.find(r.contains) != std::string::npos;
    });
    if (rule != rules_.end()) {
      content = rule->responses[std::min(rule->served, rule->responses.size() - 1)];
      ++rule->served;
    } else if (fallback_) {
      content = *fallback_;
    } else {
      throw Error(ErrorKind::ProviderError, "scripted provider has no response for this prompt");
    }
  }

  ChatResult result;
  result.content = std::move(content);
  // Rough token estimate, four characters per token.
  result.usage.prompt_tokens = static_cast<long>(payload.all_text().size() / 4);
  result.usage.completion_tokens = static_cast<long>(result.content.size() / 4);
  record_usage(result.usage);
  return result;
}

std::string trim(std::string_view text) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!text.empty() && is_space(static_cast<unsigned char>(text.front()))) text.remove_prefix(1);
  while (!text.empty() && is_space(static_cast<unsigned char>(text.back()))) text.remove_suffix(1);
  return std::string(text);
}

std::string strip_code_fence(std::string_view raw) {
  std::string text = trim(raw);
  if (text.rfind("```", 0) != 0) return text;
  const auto first_newline = text.find('\n');
  const auto close = text.rfind("```");
  if (close == 0) return trim(std::string_view(text).substr(3));
  std::string_view body(text);
  body = body.substr(0, close);
  if (first_newline != std::string::npos && first_newline < close) {
    body = body.substr(first_newline + 1);
  } else {
    body = body.substr(3);
    // "```json {...}" on one line: drop a bare language tag.
    std::size_t tag = 0;
    while (tag < body.size() && std::isalpha(static_cast<unsigned char>(body[tag]))) ++tag;
    body = body.substr(tag);
  }
  return trim(body);
}

std::optional<nlohmann::json> extract_json_object(std::string_view raw) {
  const std::string text = strip_code_fence(raw);
  for (std::size_t start = text.find('{'); start != std::string::npos; start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped) {
          escaped = false;
        } else if (c == '\\') {
          escaped = true;
        } else if (c == '"') {
          in_string = false;
        }
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}') {
        if (--depth == 0) {
          auto parsed = nlohmann::json::parse(text.begin() + static_cast<std::ptrdiff_t>(start),
                                              text.begin() + static_cast<std::ptrdiff_t>(i + 1), nullptr,
                                              /*allow_exceptions=*/false);
          if (!parsed.is_discarded() && parsed.is_object()) return parsed;
          break;
        }
      }
    }
  }
  return std::nullopt;
}

}  // namespace softcir
