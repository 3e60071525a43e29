#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "embkit/model.hpp"

namespace embkit::prompts {

/// Which prompt components are applied, and to which side.
enum class PromptStrategy {
  NoPrompt,
  SystemQ,          // system prompt on queries only
  SystemD,          // system prompt on candidates only
  SystemQD,         // system prompt on both sides
  SystemQD_QDRein,  // + representation prompt on both sides
  SystemQD_DRein,   // + representation prompt on candidates
  SystemQD_QRein,   // + representation prompt on queries
};

inline constexpr PromptStrategy kDefaultStrategy = PromptStrategy::SystemQD_QRein;

inline constexpr std::string_view kSystemText =
    "Given an image, summarize the provided image in one word. "
    "Given only text, describe the text in one word.";
inline constexpr std::string_view kOneWordKeyword = "in one word";
inline constexpr std::string_view kDefaultRepresentationStem = "Summarize the above";
inline constexpr std::string_view kImagePlaceholder = "<image>";

const char* to_string(PromptStrategy s);
// Accepts the enum spelling ("SystemQD_QRein") or a kebab alias
// ("system-qd-qrein"); nullopt otherwise.
std::optional<PromptStrategy> parse_strategy(std::string_view name);
const std::vector<PromptStrategy>& all_strategies();

bool system_on_queries(PromptStrategy s);
bool system_on_candidates(PromptStrategy s);
bool reinforce_queries(PromptStrategy s);
bool reinforce_candidates(PromptStrategy s);

// "<stem> in one word." or "<stem>." when the keyword is left out.
std::string representation_prompt(std::string_view stem, bool one_word);

enum class Role { system, user, assistant };
const char* to_string(Role r);

struct Turn {
  Role role = Role::user;
  // User turns only: leading task instruction, kept apart from the content so
  // serializers can put it on its own line. Empty when absent.
  std::string instruction;
  std::vector<ContentPart> parts;

  bool operator==(const Turn&) const = default;
};

struct RenderedConversation {
  std::vector<Turn> turns;

  // At most one system turn, exactly one user turn, trailing empty
  // assistant turn.
  bool well_formed() const;
  bool operator==(const RenderedConversation&) const = default;
};

// Content must be non-empty (validation error otherwise).
RenderedConversation render_query(std::string_view system_text, std::string_view instruction,
                                  std::span<const ContentPart> content,
                                  std::string_view representation_prompt,
                                  PromptStrategy strategy = kDefaultStrategy);

// `representation_prompt` is only used by the candidate-reinforcing
// strategies.
RenderedConversation render_candidate(std::string_view system_text,
                                      std::span<const ContentPart> content,
                                      PromptStrategy strategy = kDefaultStrategy,
                                      std::string_view representation_prompt = {});

// Generic chat markup: "System: ...", "User: ...", "Assistant:" each starting
// a line; the instruction sits on the user line and the content follows on
// the next one. Images become "<image>". No trailing newline.
std::string to_text(const RenderedConversation& conv);

// {"role": ..., "content": [{"text"|"image": ...}, ...]} per turn; the
// instruction, when present, is the first text part of the user turn.
std::string to_json(const RenderedConversation& conv);

/// Everything needed to render a dataset.
struct PromptOptions {
  PromptStrategy strategy = kDefaultStrategy;
  std::string system_text{kSystemText};
  std::string representation_stem{kDefaultRepresentationStem};
  bool candidate_one_word = true;

  std::string query_representation() const;
  std::string candidate_representation() const;
};

RenderedConversation render(const QueryRecord& q, const PromptOptions& opt);
RenderedConversation render(const CandidateRecord& c, const PromptOptions& opt);

// One JSON object per record:
// {"id", "side": "query"|"candidate", "conversation": [...], "text"}.
std::string render_jsonl(const Dataset& ds, const PromptOptions& opt);

}  // namespace embkit::prompts
