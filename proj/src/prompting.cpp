#include "halludetect/prompting.hpp"

#include "halludetect/error.hpp"
#include "halludetect/text_util.hpp"

namespace halludetect {

namespace {

constexpr std::string_view kQuestionSlot = "{question}";
constexpr std::string_view kExpressionSlot = "{expression}";

std::string Substitute(std::string_view tmpl, std::string_view question,
                       std::string_view expression) {
  std::string out;
  out.reserve(tmpl.size() + question.size() + expression.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl.substr(i, kQuestionSlot.size()) == kQuestionSlot) {
      out.append(question);
      i += kQuestionSlot.size();
    } else if (tmpl.substr(i, kExpressionSlot.size()) == kExpressionSlot) {
      out.append(expression);
      i += kExpressionSlot.size();
    } else {
      out.push_back(tmpl[i++]);
    }
  }
  return out;
}

void RequireQuestion(const QaItem& item) {
  if (item.question.empty()) {
    throw Error(ErrorCode::kEmptyQuestion, "item '" + item.id + "' has an empty question");
  }
}

}  // namespace

PromptTemplates PromptTemplates::FromJson(const nlohmann::json& j) {
  PromptTemplates t;
  if (j.contains("standard_template")) j.at("standard_template").get_to(t.standard);
  if (j.contains("expression_template")) j.at("expression_template").get_to(t.expression);
  if (t.standard.find(kQuestionSlot) == std::string::npos ||
      t.expression.find(kQuestionSlot) == std::string::npos ||
      t.expression.find(kExpressionSlot) == std::string::npos) {
    throw Error(ErrorCode::kInvalidConfig, "prompt templates must contain their placeholders");
  }
  return t;
}

PromptRendering RenderStandard(const QaItem& item, const PromptTemplates& templates) {
  RequireQuestion(item);
  return PromptRendering{Substitute(templates.standard, item.question, ""), std::nullopt, item.id};
}

PromptRendering RenderExpression(const QaItem& item, const Expression& expression,
                                 const PromptTemplates& templates) {
  RequireQuestion(item);
  if (expression.text.empty()) {
    throw Error(ErrorCode::kEmptyField, "expression '" + expression.id + "' has empty text");
  }
  return PromptRendering{Substitute(templates.expression, item.question, expression.text),
                         expression.id, item.id};
}

std::string PerturbedResponseText(const Expression& expression, std::string_view continuation) {
  const std::string_view answer = Trim(continuation);
  if (answer.empty()) return expression.text;
  std::string out = expression.text;
  out.push_back(' ');
  out.append(answer);
  return out;
}

}  // namespace halludetect
