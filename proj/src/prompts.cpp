#include "embkit/prompts.hpp"

#include <algorithm>
#include <cctype>

#include <json.hpp>

#include "embkit/error.hpp"

namespace embkit::prompts {

namespace {

using ordered_json = nlohmann::ordered_json;

struct StrategyInfo {
  PromptStrategy strategy;
  const char* name;
  const char* alias;
  bool sys_q, sys_d, rein_q, rein_d;
};

constexpr StrategyInfo kStrategies[] = {
    {PromptStrategy::NoPrompt, "NoPrompt", "no-prompt", false, false, false, false},
    {PromptStrategy::SystemQ, "SystemQ", "system-q", true, false, false, false},
    {PromptStrategy::SystemD, "SystemD", "system-d", false, true, false, false},
    {PromptStrategy::SystemQD, "SystemQD", "system-qd", true, true, false, false},
    {PromptStrategy::SystemQD_QDRein, "SystemQD_QDRein", "system-qd-qdrein", true, true, true, true},
    {PromptStrategy::SystemQD_DRein, "SystemQD_DRein", "system-qd-drein", true, true, false, true},
    {PromptStrategy::SystemQD_QRein, "SystemQD_QRein", "system-qd-qrein", true, true, true, false},
};

const StrategyInfo& info(PromptStrategy s) {
  for (const auto& i : kStrategies) {
    if (i.strategy == s) return i;
  }
  throw Error(ErrorKind::validation, "unknown prompt strategy");
}

void require_content(std::span<const ContentPart> content, const char* side) {
  if (content.empty()) {
    throw Error(ErrorKind::validation, std::string(side) + " content must not be empty");
  }
}

Turn text_turn(Role role, std::string_view text) {
  Turn t;
  t.role = role;
  if (!text.empty()) t.parts.push_back(ContentPart::text(std::string(text)));
  return t;
}

std::string part_text(const ContentPart& p) {
  return p.kind == ContentPart::Kind::image ? std::string(kImagePlaceholder) : p.value;
}

}  // namespace

const char* to_string(PromptStrategy s) { return info(s).name; }

std::optional<PromptStrategy> parse_strategy(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (const auto& i : kStrategies) {
    if (name == i.name || lower == i.alias) return i.strategy;
  }
  return std::nullopt;
}

const std::vector<PromptStrategy>& all_strategies() {
  static const std::vector<PromptStrategy> all = [] {
    std::vector<PromptStrategy> v;
    for (const auto& i : kStrategies) v.push_back(i.strategy);
    return v;
  }();
  return all;
}

bool system_on_queries(PromptStrategy s) { return info(s).sys_q; }
bool system_on_candidates(PromptStrategy s) { return info(s).sys_d; }
bool reinforce_queries(PromptStrategy s) { return info(s).rein_q; }
bool reinforce_candidates(PromptStrategy s) { return info(s).rein_d; }

std::string representation_prompt(std::string_view stem, bool one_word) {
  std::string out(stem);
  if (one_word) {
    out += ' ';
    out += kOneWordKeyword;
  }
  out += '.';
  return out;
}

const char* to_string(Role r) {
  switch (r) {
    case Role::system: return "system";
    case Role::user: return "user";
    case Role::assistant: return "assistant";
  }
  return "?";
}

bool RenderedConversation::well_formed() const {
  std::size_t systems = 0, users = 0;
  for (const auto& t : turns) {
    systems += t.role == Role::system;
    users += t.role == Role::user;
  }
  if (turns.empty() || systems > 1 || users != 1) return false;
  if (systems == 1 && turns.front().role != Role::system) return false;
  const Turn& last = turns.back();
  return last.role == Role::assistant && last.parts.empty() && last.instruction.empty();
}

RenderedConversation render_query(std::string_view system_text, std::string_view instruction,
                                  std::span<const ContentPart> content,
                                  std::string_view representation_prompt,
                                  PromptStrategy strategy) {
  require_content(content, "query");
  RenderedConversation conv;
  if (system_on_queries(strategy)) conv.turns.push_back(text_turn(Role::system, system_text));
  Turn user;
  user.role = Role::user;
  user.instruction = std::string(instruction);
  user.parts.assign(content.begin(), content.end());
  if (reinforce_queries(strategy) && !representation_prompt.empty()) {
    user.parts.push_back(ContentPart::text(std::string(representation_prompt)));
  }
  conv.turns.push_back(std::move(user));
  conv.turns.push_back(Turn{Role::assistant, {}, {}});
  return conv;
}

RenderedConversation render_candidate(std::string_view system_text,
                                      std::span<const ContentPart> content,
                                      PromptStrategy strategy,
                                      std::string_view representation_prompt) {
  require_content(content, "candidate");
  RenderedConversation conv;
  if (system_on_candidates(strategy)) conv.turns.push_back(text_turn(Role::system, system_text));
  Turn user;
  user.role = Role::user;
  user.parts.assign(content.begin(), content.end());
  if (reinforce_candidates(strategy) && !representation_prompt.empty()) {
    user.parts.push_back(ContentPart::text(std::string(representation_prompt)));
  }
  conv.turns.push_back(std::move(user));
  conv.turns.push_back(Turn{Role::assistant, {}, {}});
  return conv;
}

std::string to_text(const RenderedConversation& conv) {
  std::string out;
  for (const auto& t : conv.turns) {
    if (!out.empty()) out += '\n';
    switch (t.role) {
      case Role::system: out += "System:"; break;
      case Role::user: out += "User:"; break;
      case Role::assistant: out += "Assistant:"; break;
    }
    std::string body;
    for (std::size_t i = 0; i < t.parts.size(); ++i) {
      if (i) body += ' ';
      body += part_text(t.parts[i]);
    }
    if (!t.instruction.empty()) {
      out += ' ';
      out += t.instruction;
      if (!body.empty()) out += '\n' + body;
    } else if (!body.empty()) {
      out += ' ' + body;
    }
  }
  return out;
}

std::string to_json(const RenderedConversation& conv) {
  ordered_json arr = ordered_json::array();
  for (const auto& t : conv.turns) {
    ordered_json parts = ordered_json::array();
    if (!t.instruction.empty()) parts.push_back({{"text", t.instruction}});
    for (const auto& p : t.parts) {
      parts.push_back({{p.kind == ContentPart::Kind::image ? "image" : "text", p.value}});
    }
    ordered_json turn;
    turn["role"] = to_string(t.role);
    turn["content"] = std::move(parts);
    arr.push_back(std::move(turn));
  }
  return arr.dump();
}

std::string PromptOptions::query_representation() const {
  // The query side always carries the keyword: the task instruction already
  // asks for an answer, so the cue has to pin the output format.
  return representation_prompt(representation_stem, true);
}

std::string PromptOptions::candidate_representation() const {
  return representation_prompt(representation_stem, candidate_one_word);
}

RenderedConversation render(const QueryRecord& q, const PromptOptions& opt) {
  return render_query(opt.system_text, q.instruction, q.content, opt.query_representation(),
                      opt.strategy);
}

RenderedConversation render(const CandidateRecord& c, const PromptOptions& opt) {
  return render_candidate(opt.system_text, c.content, opt.strategy,
                          opt.candidate_representation());
}

std::string render_jsonl(const Dataset& ds, const PromptOptions& opt) {
  std::string out;
  auto emit = [&](const std::string& id, const char* side, const RenderedConversation& conv) {
    ordered_json o;
    o["id"] = id;
    o["side"] = side;
    o["conversation"] = ordered_json::parse(to_json(conv));
    o["text"] = to_text(conv);
    out += o.dump();
    out += '\n';
  };
  for (const auto& q : ds.queries) emit(q.qid, "query", render(q, opt));
  for (const auto& c : ds.candidates) emit(c.did, "candidate", render(c, opt));
  return out;
}

}  // namespace embkit::prompts
