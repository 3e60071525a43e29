#include "embkit/dataset.hpp"

#include <algorithm>
#include <unordered_set>

#include <json.hpp>

#include "embkit/error.hpp"
#include "embkit/fileutil.hpp"

namespace embkit {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

template <typename Fn>
void for_each_line(const std::string& text, const std::string& source, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    ++line_no;
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(source, line_no, std::string("invalid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ParseError(source, line_no, "expected a JSON object");
    fn(obj, line_no);
  }
}

std::string require_string(const json& obj, const char* key, const std::string& source,
                           std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(source, line, std::string("missing field '") + key + "'");
  if (!it->is_string()) {
    throw ParseError(source, line, std::string("field '") + key + "' must be a string");
  }
  return it->get<std::string>();
}

std::vector<ContentPart> parse_content(const json& obj, const std::string& source,
                                       std::size_t line) {
  auto it = obj.find("content");
  if (it == obj.end()) throw ParseError(source, line, "missing field 'content'");
  if (!it->is_array()) throw ParseError(source, line, "field 'content' must be an array");
  std::vector<ContentPart> parts;
  parts.reserve(it->size());
  for (const auto& part : *it) {
    if (!part.is_object() || part.size() != 1) {
      throw ParseError(source, line, "content part must be {\"text\": ...} or {\"image\": ...}");
    }
    const auto first = part.begin();
    const std::string key = first.key();
    const json& value = first.value();
    if (!value.is_string()) throw ParseError(source, line, "content part value must be a string");
    if (key == "text") {
      parts.push_back(ContentPart::text(value.get<std::string>()));
    } else if (key == "image") {
      parts.push_back(ContentPart::image(value.get<std::string>()));
    } else {
      throw ParseError(source, line, "unknown content part kind '" + key + "'");
    }
  }
  return parts;
}

ordered_json content_json(const std::vector<ContentPart>& parts) {
  ordered_json arr = ordered_json::array();
  for (const auto& p : parts) {
    ordered_json o;
    o[p.kind == ContentPart::Kind::text ? "text" : "image"] = p.value;
    arr.push_back(std::move(o));
  }
  return arr;
}

}  // namespace

std::vector<QueryRecord> parse_queries(const std::string& text, const std::string& source) {
  std::vector<QueryRecord> out;
  std::unordered_set<std::string> seen;
  for_each_line(text, source, [&](const json& obj, std::size_t line) {
    QueryRecord q;
    q.qid = require_string(obj, "qid", source, line);
    q.instruction = obj.contains("instruction") ? require_string(obj, "instruction", source, line)
                                                : std::string();
    q.content = parse_content(obj, source, line);
    q.positive_did = require_string(obj, "positive_did", source, line);
    if (!seen.insert(q.qid).second) {
      throw Error(ErrorKind::validation,
                  source + ":" + std::to_string(line) + ": duplicate qid '" + q.qid + "'");
    }
    out.push_back(std::move(q));
  });
  return out;
}

std::vector<CandidateRecord> parse_candidates(const std::string& text, const std::string& source) {
  std::vector<CandidateRecord> out;
  std::unordered_set<std::string> seen;
  for_each_line(text, source, [&](const json& obj, std::size_t line) {
    CandidateRecord c;
    c.did = require_string(obj, "did", source, line);
    c.content = parse_content(obj, source, line);
    if (!seen.insert(c.did).second) {
      throw Error(ErrorKind::validation,
                  source + ":" + std::to_string(line) + ": duplicate did '" + c.did + "'");
    }
    out.push_back(std::move(c));
  });
  return out;
}

std::vector<QueryRecord> load_queries(const std::filesystem::path& path) {
  return parse_queries(read_file(path), path.string());
}

std::vector<CandidateRecord> load_candidates(const std::filesystem::path& path) {
  return parse_candidates(read_file(path), path.string());
}

Dataset load_dataset(const std::filesystem::path& queries_path,
                     const std::filesystem::path& candidates_path) {
  return Dataset{load_queries(queries_path), load_candidates(candidates_path)};
}

std::string serialize_queries(const std::vector<QueryRecord>& queries) {
  std::string out;
  for (const auto& q : queries) {
    ordered_json o;
    o["qid"] = q.qid;
    o["instruction"] = q.instruction;
    o["content"] = content_json(q.content);
    o["positive_did"] = q.positive_did;
    out += o.dump();
    out += '\n';
  }
  return out;
}

std::string serialize_candidates(const std::vector<CandidateRecord>& candidates) {
  std::string out;
  for (const auto& c : candidates) {
    ordered_json o;
    o["did"] = c.did;
    o["content"] = content_json(c.content);
    out += o.dump();
    out += '\n';
  }
  return out;
}

DocToQueries build_d2q(const std::vector<QueryRecord>& queries) {
  DocToQueries d2q;
  for (const auto& q : queries) d2q.add(q.positive_did, q.qid);
  return d2q;
}

const char* to_string(Finding::Kind kind) noexcept {
  switch (kind) {
    case Finding::Kind::dangling_positive: return "dangling_positive";
    case Finding::Kind::missing_embedding: return "missing_embedding";
    case Finding::Kind::non_finite_row: return "non_finite_row";
  }
  return "unknown";
}

std::size_t ValidationReport::count(Finding::Kind kind) const {
  return static_cast<std::size_t>(std::count_if(
      findings.begin(), findings.end(), [kind](const Finding& f) { return f.kind == kind; }));
}

ValidationReport validate(const Dataset& dataset, const EmbeddingMatrix* query_embeddings,
                          const EmbeddingMatrix* candidate_embeddings) {
  ValidationReport report;
  std::unordered_set<std::string> dids;
  for (const auto& c : dataset.candidates) dids.insert(c.did);
  for (const auto& q : dataset.queries) {
    if (!dids.contains(q.positive_did)) {
      report.findings.push_back({Finding::Kind::dangling_positive, q.qid,
                                 "positive_did '" + q.positive_did + "' has no candidate record"});
    }
  }

  auto check_matrix = [&](const EmbeddingMatrix& m, auto&& record_ids, const char* what) {
    for (const std::string& id : record_ids) {
      if (!m.find(id)) {
        report.findings.push_back(
            {Finding::Kind::missing_embedding, id, std::string("no row in the ") + what + " matrix"});
      }
    }
    for (std::size_t r : m.non_finite_rows()) {
      report.findings.push_back(
          {Finding::Kind::non_finite_row, m.id(r), std::string("NaN/Inf in the ") + what + " matrix"});
    }
  };

  if (query_embeddings != nullptr) {
    std::vector<std::string> ids;
    for (const auto& q : dataset.queries) ids.push_back(q.qid);
    check_matrix(*query_embeddings, ids, "query");
  }
  if (candidate_embeddings != nullptr) {
    std::vector<std::string> ids;
    for (const auto& c : dataset.candidates) ids.push_back(c.did);
    check_matrix(*candidate_embeddings, ids, "candidate");
  }
  return report;
}

}  // namespace embkit
