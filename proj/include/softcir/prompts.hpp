#pragma once

/// The prompt templates sent to the chat model. Each template has a version
/// string; any change to template or format footer text must bump it, since
/// the version is part of the constraint cache key.

#include <map>
#include <string>
#include <string_view>

#include "softcir/provider.hpp"

namespace softcir::prompts {

inline constexpr std::string_view kDualConstraintVersion = "dual-constraint/v1";
inline constexpr std::string_view kQueryGenerationGenericVersion = "stage1-query-generic/v1";
inline constexpr std::string_view kQueryGenerationFashionVersion = "stage1-query-fashion/v1";
inline constexpr std::string_view kConfidenceScoringVersion = "confidence-scoring/v1";
inline constexpr std::string_view kRefinementVersion = "refinement/v1";

extern const std::string_view kDualConstraintTemplate;
extern const std::string_view kDualConstraintFooter;
extern const std::string_view kQueryGenerationGenericTemplate;
extern const std::string_view kQueryGenerationFashionTemplate;
extern const std::string_view kQueryGenerationFooter;
extern const std::string_view kConfidenceScoringTemplate;
extern const std::string_view kConfidenceScoringFooter;
extern const std::string_view kRefinementTemplate;

/// Single-pass `{name}` substitution. Unknown placeholders and other braces
/// are left as they are; substituted values are never rescanned.
std::string render(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& values);

/// Deterministic text form of a payload for snapshots and logs: text parts
/// and `<image:id>` markers in send order.
std::string snapshot(const PromptPayload& payload);

/// ["a", "b"] with JSON string escaping.
std::string quoted_list(const std::vector<std::string>& items);

}  // namespace softcir::prompts
