#include "softcir/prompts.hpp"

#include "json.hpp"

namespace softcir::prompts {

const std::string_view kDualConstraintTemplate = R"(You are a helpful assistant for a composed image retrieval system.
You are given a reference image and a modification text that describes how the image should be changed.
Your task is to extract meaningful attribute information and generate two types of semantic queries from a reference image and a modification text.

## Step 1. Attribute Classification
Analyze the modification text in the context of the reference image and extract three types of attribute-value lists.
- "keep": A list of key attribute values that should remain unchanged in the reference image according to the modification text.
- "add": A list of attribute values that are not present in the reference image but are explicitly or implicitly required by the modification text.
- "remove": A list of attribute values that are present in the reference image but are explicitly removed by the modification text.

## Step 2. Query Generation
Using the attribute-value lists from Step 1, generate text queries that can be directly used for image retrieval.
Each query must be fluent, self-contained. If an attribute is described in relative terms, you must resolve it into a concrete absolute caption using visual clues from the reference image.
- "prescriptive_query": Write a short, specific image caption that describes the visual features that should be included in the target image, focusing on the attribute values in the "keep" and "add" lists.
- "proscriptive_query": Write a short, specific image caption that describes the reference image as it is, using positive, natural language, focusing on the attribute values in the "remove" list.

## Input:
Modification Text: "{mod_text}"
Reference image:
)";

const std::string_view kDualConstraintFooter = R"(## Output Format:
Respond with a single JSON object and nothing else, using exactly these keys:
{"keep": [string, ...], "add": [string, ...], "remove": [string, ...], "prescriptive_query": string, "proscriptive_query": string}
If the "remove" list is empty, set "proscriptive_query" to an empty string.
)";

const std::string_view kQueryGenerationGenericTemplate = R"(You are given two pieces of input:
1. A reference image description that tells you what the original image looks like.
2. A User's Modifications text that describes how the user wants the image to be changed.

Your task is to write a two-sentence description of the image the user wants.

- The sentence1 should focus on the only User's modifications—describe the image primarily according to the User's Modifications.
- The sentence2 should preserve the elements from the reference image that do **not** conflict with the User's Modifications, describing details from the original image that can be retained.
  If there are no additional elements to preserve beyond what is stated in the User's Modifications, return an empty string.

Describe the image using only concrete, observable attributes.
Make sure both sentences are concise and consistent.

## User's Modifications
"{caption1}"
)";

const std::string_view kQueryGenerationFashionTemplate = R"(You are given two pieces of input:
1. A reference image description that tells you what the original product looks like.
2. A User's Modifications text that describes how the user wants the product to be changed.

Your task is to write a two-sentence description of the product the user wants.

- The sentence1 should focus on the only User's modifications—describe the product primarily according to the User's Modifications.
- The sentence2 should preserve the elements from the reference image that do **not** conflict with the User's Modifications, describing details from the original product that can be retained.

Describe the image using only concrete, observable attributes (e.g., color, shape, texture, pattern, material).
Avoid indirect or relative terms like "more," "less", "similar", or "retain". Use precise, objective language.
Make sure both sentences are concise and consistent.

## User's Modifications
1. "{caption1}"
2: "{caption2}"
)";

const std::string_view kQueryGenerationFooter = R"(## Output Format:
Write sentence1 on the first line and sentence2 on the second line, with no labels or numbering.
If sentence2 is an empty string, leave the second line blank.
)";

const std::string_view kConfidenceScoringTemplate = R"(You are an AI assistant specialized in image analysis and candidate selection. Your task is to analyze images and select the most appropriate candidates based on given criteria.

TASK INPUT:
- reference_image_name: {ref_image_name}
- relative_captions: {relative_captions}
- candidate_images: {top_k_names}

TASK INSTRUCTIONS:
1. Analyze the reference image to understand its key visual features and context.
2. Interpret the relative captions carefully — they describe how the desired candidate image should differ from or relate to the reference image.
3. For each candidate image:
    - Evaluate how well it visually represents the *expected relationship* or *transformation* implied by combining the reference image and the relative captions.
    - Assign a confidence score between 0.0 and 1.0, reflecting how accurately the candidate image captures this intended change or relation.
)";

const std::string_view kConfidenceScoringFooter = R"(OUTPUT FORMAT:
Respond with a single JSON object and nothing else that maps every candidate image name to its confidence score, for example {"candidate_image_name": 0.0}.
)";

const std::string_view kRefinementTemplate = R"(You are an expert caption-writer for composed-image retrieval across various domains.

The images above show:
1. Reference image
2. Target image
3. Comparison images (similar but incorrect)

Original captions: {original_captions}
The original captions describe how to transform the reference image into the target image, but they are not specific enough to rule out the comparison images.

Task: Write one refined caption that uniquely identifies the target image while staying faithful to the intent of the original captions.

Guidelines:
- Use the original captions as a foundation; keep their meaning while making them more specific.
- Preserve the original captions' writing tone and sentence style.
- Add concrete, observable details present in the target but absent from the comparison images.
- Be concise and output exactly one sentence.
)";

std::string render(std::string_view tmpl, const std::map<std::string, std::string, std::less<>>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find('{', pos);
    if (open == std::string_view::npos) break;
    const auto close = tmpl.find('}', open + 1);
    if (close == std::string_view::npos) break;
    auto it = values.find(tmpl.substr(open + 1, close - open - 1));
    if (it == values.end()) {
      out.append(tmpl.substr(pos, open + 1 - pos));
      pos = open + 1;
      continue;
    }
    out.append(tmpl.substr(pos, open - pos));
    out.append(it->second);
    pos = close + 1;
  }
  out.append(tmpl.substr(pos));
  return out;
}

std::string snapshot(const PromptPayload& payload) {
  std::string images;
  for (const auto& image : payload.images) images += "<image:" + image.id + ">\n";
  std::string out = "[prompt_version: " + payload.prompt_version + "]\n";
  if (payload.images_first) {
    out += images + payload.text;
  } else {
    out += payload.text + images;
  }
  if (!payload.trailer.empty()) out += payload.trailer;
  return out;
}

std::string quoted_list(const std::vector<std::string>& items) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out += ", ";
    out += nlohmann::json(items[i]).dump();
  }
  return out + "]";
}

}  // namespace softcir::prompts
