#pragma once

#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "entcap/corpus.hpp"

namespace entcap {

enum class TemplateId { kDefault, kVariant1, kVariant2, kVariant3, kCustom };

std::string_view to_string(TemplateId id);
TemplateId parse_template_id(std::string_view text);

struct HardPromptTemplate {
  std::string prefix;
  std::string separator;
  std::string suffix;
  TemplateId template_id = TemplateId::kCustom;

  /// "There are {e1}, ..., {eN} in the image."
  static HardPromptTemplate default_template();
  /// Built-in template by id; kCustom is rejected (use make_custom).
  static HardPromptTemplate builtin(TemplateId id);
  static HardPromptTemplate make_custom(std::string prefix, std::string separator,
                                        std::string suffix);
};

struct HardPrompt {
  std::string text;
  std::vector<Entity> entities_used;

  bool empty() const { return text.empty(); }
};

/// Drops each entity independently with probability `r_mask`; survivors keep their order.
/// Throws DomainError unless 0 <= r_mask <= 1.
std::vector<Entity> mask_entities(const std::vector<Entity>& entities, double r_mask,
                                  std::mt19937_64& rng);

/// An empty entity list renders to an empty prompt rather than a template with a hole.
HardPrompt render_hard_prompt(const std::vector<Entity>& entities,
                              const HardPromptTemplate& prompt_template);

/// Prompt templates used to describe a class name to the text encoder. `{}` marks the name.
struct EntityQueryTemplates {
  std::vector<std::string> ensemble;

  /// A compact prompt-ensemble set in the style of zero-shot image classification.
  static EntityQueryTemplates standard();
};

/// `{"A photo of <name>"}` without ensembling, otherwise one filled string per template.
/// Throws DomainError for an empty name.
std::vector<std::string> build_inference_entity_query(std::string_view name, bool ensemble,
                                                      const EntityQueryTemplates& templates =
                                                          EntityQueryTemplates::standard());

}  // namespace entcap
