#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "halludetect/core_model.hpp"

namespace halludetect {

struct PromptRendering {
  std::string text;
  std::optional<std::string> expression_id;
  std::string question_id;

  bool operator==(const PromptRendering&) const = default;
};

// Templates use the placeholders {question} and {expression}. Substitution is
// single-pass: placeholder-like text inside a question is left untouched.
struct PromptTemplates {
  std::string standard = "Question: {question}\nAnswer:";
  std::string expression = "Question: {question}\nAnswer: {expression}";

  // Reads prompt.standard_template / prompt.expression_template style keys
  // ("standard_template", "expression_template") from a config object.
  static PromptTemplates FromJson(const nlohmann::json& j);
};

PromptRendering RenderStandard(const QaItem& item, const PromptTemplates& templates = {});

PromptRendering RenderExpression(const QaItem& item, const Expression& expression,
                                 const PromptTemplates& templates = {});

// The answer text seen by semantic comparisons: prefix phrase followed by the
// trimmed model continuation, joined by a single space.
std::string PerturbedResponseText(const Expression& expression, std::string_view continuation);

}  // namespace halludetect
