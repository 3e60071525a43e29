#include "embkit/attnstats.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>

#include <json.hpp>

#include "embkit/error.hpp"
#include "embkit/fileutil.hpp"

namespace embkit::attn {

static_assert(std::endian::native == std::endian::little,
              "ATN1 encoding assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'A', 'T', 'N', '1'};
constexpr const char* kTypeNames[kTokenTypes] = {"system", "user", "image", "assistant", "other"};

std::string shortest(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

}  // namespace

const char* to_string(TokenType t) { return kTypeNames[static_cast<std::size_t>(t)]; }

std::optional<TokenType> parse_token_type(std::string_view name) {
  for (std::size_t i = 0; i < kTokenTypes; ++i) {
    if (name == kTypeNames[i]) return static_cast<TokenType>(i);
  }
  return std::nullopt;
}

void AttentionDump::check(double row_tolerance) const {
  const std::size_t expected = std::size_t{layers} * heads * seq * seq;
  if (layers == 0 || heads == 0 || seq == 0 || weights.size() != expected) {
    throw Error(ErrorKind::validation, "attention dump shape " + std::to_string(layers) + "x" +
                                           std::to_string(heads) + "x" + std::to_string(seq) +
                                           " does not match " + std::to_string(weights.size()) +
                                           " weights");
  }
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          const float w = at(l, h, i, j);
          const std::string where = "layer " + std::to_string(l) + " head " + std::to_string(h) +
                                    " row " + std::to_string(i);
          if (!(w >= 0.0F && w <= 1.0F)) {
            throw Error(ErrorKind::validation, "weight outside [0, 1] at " + where);
          }
          if (j > i && w != 0.0F) {
            throw Error(ErrorKind::validation, "non-causal weight at " + where);
          }
          sum += w;
        }
        if (std::abs(sum - 1.0) > row_tolerance) {
          throw Error(ErrorKind::validation, "row sum " + shortest(sum) + " at layer " +
                                                 std::to_string(l) + " head " + std::to_string(h) +
                                                 " row " + std::to_string(i));
        }
      }
    }
  }
}

std::string encode_atn1(const AttentionDump& dump) {
  std::string out(kMagic, 4);
  const std::uint32_t dims[3] = {dump.layers, dump.heads, dump.seq};
  out.append(reinterpret_cast<const char*>(dims), sizeof dims);
  out.append(reinterpret_cast<const char*>(dump.weights.data()), dump.weights.size() * sizeof(float));
  return out;
}

AttentionDump decode_atn1(const std::string& bytes, const std::string& source) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(ErrorKind::parse, source + ": not an ATN1 attention dump");
  }
  std::uint32_t dims[3];
  std::memcpy(dims, bytes.data() + 4, sizeof dims);
  AttentionDump d{dims[0], dims[1], dims[2], {}};
  const std::size_t count = std::size_t{dims[0]} * dims[1] * dims[2] * dims[2];
  if (bytes.size() != 16 + count * sizeof(float)) {
    throw Error(ErrorKind::parse, source + ": expected " + std::to_string(16 + count * 4) +
                                      " bytes, found " + std::to_string(bytes.size()));
  }
  d.weights.resize(count);
  std::memcpy(d.weights.data(), bytes.data() + 16, count * sizeof(float));
  return d;
}

AttentionDump read_atn1(const std::string& path) { return decode_atn1(read_file(path), path); }

void write_atn1(const std::string& path, const AttentionDump& dump) {
  write_file_atomic(path, encode_atn1(dump));
}

TokenTypeMap TokenTypeMap::with_outputs(std::vector<TokenType> labels, OutputMode mode) {
  TokenTypeMap m{std::move(labels), {}};
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    const bool take = mode == OutputMode::attending ? i >= 1 : m.labels[i] == TokenType::assistant;
    if (take) m.output_positions.push_back(i);
  }
  return m;
}

void TokenTypeMap::check(std::size_t seq) const {
  if (labels.size() != seq) {
    throw Error(ErrorKind::validation, "type map has " + std::to_string(labels.size()) +
                                           " labels for a sequence of " + std::to_string(seq));
  }
  if (output_positions.empty()) throw Error(ErrorKind::validation, "no output positions");
  for (auto p : output_positions) {
    if (p >= seq) {
      throw Error(ErrorKind::validation, "output position " + std::to_string(p) + " out of range");
    }
  }
}

TokenTypeMap parse_typemap(const std::string& json_text, OutputMode mode, const std::string& source) {
  try {
    const auto j = nlohmann::json::parse(json_text);
    std::vector<TokenType> labels;
    for (const auto& l : j.at("labels")) {
      auto t = parse_token_type(l.get<std::string>());
      if (!t) throw Error(ErrorKind::parse, source + ": unknown token type '" + l.get<std::string>() + "'");
      labels.push_back(*t);
    }
    if (!j.contains("output_positions")) return TokenTypeMap::with_outputs(std::move(labels), mode);
    TokenTypeMap m{std::move(labels), j.at("output_positions").get<std::vector<std::size_t>>()};
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::parse, source + ": " + e.what());
  }
}

TokenTypeMap load_typemap(const std::string& path, OutputMode mode) {
  return parse_typemap(read_file(path), mode, path);
}

TypeEfficiency attention_efficiency(const AttentionDump& dump, const TokenTypeMap& map,
                                    std::size_t layer, const EfficiencyOptions& opt) {
  if (layer >= dump.layers) {
    throw Error(ErrorKind::validation, "layer " + std::to_string(layer) + " out of range");
  }
  if (dump.weights.size() != std::size_t{dump.layers} * dump.heads * dump.seq * dump.seq) {
    throw Error(ErrorKind::validation, "attention dump shape does not match its weights");
  }
  map.check(dump.seq);

  std::array<std::size_t, kTokenTypes> counts{};
  for (auto t : map.labels) ++counts[static_cast<std::size_t>(t)];

  const std::size_t seq = dump.seq;
  const double inv_heads = 1.0 / dump.heads;
  std::array<double, kTokenTypes> mass{};
  std::vector<double> head_mean(seq);
  for (std::size_t i : map.output_positions) {
    std::fill(head_mean.begin(), head_mean.end(), 0.0);
    for (std::size_t h = 0; h < dump.heads; ++h) {
      const float* row = dump.matrix(layer, h).data() + i * seq;
      for (std::size_t p = 0; p < seq; ++p) head_mean[p] += row[p];
    }
    std::array<double, kTokenTypes> alpha{};
    for (std::size_t p = 0; p < seq; ++p) {
      alpha[static_cast<std::size_t>(map.labels[p])] += head_mean[p] * inv_heads;
    }
    for (std::size_t t = 0; t < kTokenTypes; ++t) mass[t] += alpha[t];
  }

  TypeEfficiency eps;
  const double outputs = static_cast<double>(map.output_positions.size());
  for (std::size_t t = 0; t < kTokenTypes; ++t) {
    if (counts[t] == 0) continue;
    double e = mass[t] / static_cast<double>(counts[t]);
    if (opt.per_output) e /= outputs;
    eps[t] = e;
  }
  return eps;
}

namespace {

EfficiencyReport assemble(const std::vector<TypeEfficiency>& per_layer, const TokenTypeMap& map,
                          const EfficiencyOptions& opt) {
  EfficiencyReport r;
  r.per_output = opt.per_output;
  r.layers = per_layer.size();
  r.output_count = map.output_positions.size();
  double sys = 0.0, usr = 0.0;
  bool have_both = true;
  for (std::size_t l = 0; l < per_layer.size(); ++l) {
    const auto& eps = per_layer[l];
    for (std::size_t t = 0; t < kTokenTypes; ++t) {
      if (eps[t]) r.rows.push_back({l, static_cast<TokenType>(t), *eps[t]});
    }
    const auto& s = eps[static_cast<std::size_t>(TokenType::system)];
    const auto& u = eps[static_cast<std::size_t>(TokenType::user)];
    if (!s || !u) {
      have_both = false;
      continue;
    }
    sys += *s;
    usr += *u;
    if (*s > *u) ++r.layers_system_above_user;
  }
  if (have_both && !per_layer.empty()) r.system_dominant = sys > usr;
  return r;
}

}  // namespace

EfficiencyReport efficiency_report(const AttentionDump& dump, const TokenTypeMap& map,
                                   const EfficiencyOptions& opt) {
  map.check(dump.seq);
  std::vector<TypeEfficiency> per_layer(dump.layers);
  std::vector<std::string> failures(dump.layers);
  const long layers = static_cast<long>(dump.layers);
#pragma omp parallel for schedule(dynamic, 1)
  for (long l = 0; l < layers; ++l) {
    try {
      per_layer[l] = attention_efficiency(dump, map, static_cast<std::size_t>(l), opt);
    } catch (const Error& e) {
      failures[l] = e.what();
    }
  }
  for (const auto& f : failures) {
    if (!f.empty()) throw Error(ErrorKind::validation, f);
  }
  return assemble(per_layer, map, opt);
}

EfficiencyReport efficiency_report_serial(const AttentionDump& dump, const TokenTypeMap& map,
                                          const EfficiencyOptions& opt) {
  std::vector<TypeEfficiency> per_layer;
  for (std::size_t l = 0; l < dump.layers; ++l) {
    per_layer.push_back(attention_efficiency(dump, map, l, opt));
  }
  return assemble(per_layer, map, opt);
}

std::string report_csv(const EfficiencyReport& report) {
  std::string out = "layer,type,epsilon\n";
  for (const auto& row : report.rows) {
    out += std::to_string(row.layer) + "," + to_string(row.type) + "," + shortest(row.epsilon) + "\n";
  }
  return out;
}

std::vector<ReportRow> parse_report_csv(const std::string& text, const std::string& source) {
  std::vector<ReportRow> rows;
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    const std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line_no == 1) {
      if (line != "layer,type,epsilon") throw ParseError(source, 1, "unexpected CSV header");
      continue;
    }
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos) {
      throw ParseError(source, line_no, "expected 3 columns");
    }
    ReportRow row;
    const char* b = line.data();
    auto r1 = std::from_chars(b, b + c1, row.layer);
    auto type = parse_token_type(std::string_view(line).substr(c1 + 1, c2 - c1 - 1));
    auto r3 = std::from_chars(b + c2 + 1, b + line.size(), row.epsilon);
    if (r1.ec != std::errc() || r1.ptr != b + c1 || !type || r3.ec != std::errc() ||
        r3.ptr != b + line.size()) {
      throw ParseError(source, line_no, "malformed row '" + line + "'");
    }
    row.type = *type;
    rows.push_back(row);
  }
  return rows;
}

std::string report_summary_json(const EfficiencyReport& report) {
  nlohmann::ordered_json o;
  o["head_aggregation"] = report.head_aggregation;
  o["per_output"] = report.per_output;
  o["output_positions"] = report.output_count;
  o["layers"] = report.layers;
  o["layers_system_above_user"] = report.layers_system_above_user;
  if (report.system_dominant) {
    o["system_dominant"] = *report.system_dominant;
  } else {
    o["system_dominant"] = nullptr;
  }
  return o.dump();
}

std::string report_table(const EfficiencyReport& report) {
  std::string out;
  std::size_t current = static_cast<std::size_t>(-1);
  for (const auto& row : report.rows) {
    if (row.layer != current) {
      if (!out.empty()) out += '\n';
      current = row.layer;
      out += "layer " + std::to_string(row.layer) + ":";
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, " %s=%.6g", to_string(row.type), row.epsilon);
    out += buf;
  }
  if (!out.empty()) out += '\n';
  if (report.system_dominant) {
    out += std::string("system > user: ") + (*report.system_dominant ? "yes" : "no") + "\n";
  }
  return out;
}

}  // namespace embkit::attn
