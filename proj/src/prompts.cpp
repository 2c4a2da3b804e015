#include "entcap/prompts.hpp"

#include <fmt/format.h>

#include "entcap/errors.hpp"

namespace entcap {

std::string_view to_string(TemplateId id) {
  switch (id) {
    case TemplateId::kDefault: return "default";
    case TemplateId::kVariant1: return "variant1";
    case TemplateId::kVariant2: return "variant2";
    case TemplateId::kVariant3: return "variant3";
    case TemplateId::kCustom: return "custom";
  }
  return "default";
}

TemplateId parse_template_id(std::string_view text) {
  if (text == "default") return TemplateId::kDefault;
  if (text == "variant1") return TemplateId::kVariant1;
  if (text == "variant2") return TemplateId::kVariant2;
  if (text == "variant3") return TemplateId::kVariant3;
  if (text == "custom") return TemplateId::kCustom;
  throw ConfigError(fmt::format("unknown hard prompt template '{}'", text));
}

HardPromptTemplate HardPromptTemplate::default_template() { return builtin(TemplateId::kDefault); }

HardPromptTemplate HardPromptTemplate::builtin(TemplateId id) {
  switch (id) {
    case TemplateId::kDefault:
      return {"There are ", ", ", " in the image.", id};
    case TemplateId::kVariant1:
      return {"There are ", ", ", " in the scene. The image shows", id};
    case TemplateId::kVariant2:
      return {"A photo of ", ", ", ", a caption to describe this image is", id};
    case TemplateId::kVariant3:
      return {"To describe this image, let us think step by step. In this image, we can see ",
              ", ", ", so a sentence to describe this picture is", id};
    case TemplateId::kCustom:
      break;
  }
  throw ConfigError("custom templates need explicit prefix/separator/suffix");
}

HardPromptTemplate HardPromptTemplate::make_custom(std::string prefix, std::string separator,
                                                   std::string suffix) {
  return {std::move(prefix), std::move(separator), std::move(suffix), TemplateId::kCustom};
}

std::vector<Entity> mask_entities(const std::vector<Entity>& entities, double r_mask,
                                  std::mt19937_64& rng) {
  if (!(r_mask >= 0.0 && r_mask <= 1.0)) {
    throw DomainError(fmt::format("masking ratio {} outside [0, 1]", r_mask));
  }
  std::bernoulli_distribution drop(r_mask);
  std::vector<Entity> kept;
  kept.reserve(entities.size());
  for (const auto& entity : entities) {
    if (!drop(rng)) kept.push_back(entity);
  }
  return kept;
}

HardPrompt render_hard_prompt(const std::vector<Entity>& entities,
                              const HardPromptTemplate& prompt_template) {
  HardPrompt prompt;
  if (entities.empty()) return prompt;
  std::string text = prompt_template.prefix;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    if (i > 0) text += prompt_template.separator;
    text += entities[i].name;
  }
  text += prompt_template.suffix;
  prompt.text = std::move(text);
  prompt.entities_used = entities;
  return prompt;
}

EntityQueryTemplates EntityQueryTemplates::standard() {
  return {{"itap of a {}.", "a bad photo of the {}.", "a origami {}.", "a photo of the large {}.",
           "a {} in a video game.", "art of the {}.", "a photo of the small {}."}};
}

std::vector<std::string> build_inference_entity_query(std::string_view name, bool ensemble,
                                                      const EntityQueryTemplates& templates) {
  if (name.empty()) throw DomainError("entity name must be non-empty");
  if (!ensemble) return {fmt::format("A photo of {}", name)};
  std::vector<std::string> queries;
  queries.reserve(templates.ensemble.size());
  for (const auto& t : templates.ensemble) {
    queries.push_back(fmt::format(fmt::runtime(t), name));
  }
  return queries;
}

}  // namespace entcap
