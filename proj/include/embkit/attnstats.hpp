#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace embkit::attn {

enum class TokenType { system, user, image, assistant, other };
inline constexpr std::size_t kTokenTypes = 5;

const char* to_string(TokenType t);
std::optional<TokenType> parse_token_type(std::string_view name);

/// Causal attention weights of one forward pass, [layer][head][i][j] with
/// row i attending over positions j <= i.
struct AttentionDump {
  std::uint32_t layers = 0;
  std::uint32_t heads = 0;
  std::uint32_t seq = 0;
  std::vector<float> weights;

  float at(std::size_t layer, std::size_t head, std::size_t i, std::size_t j) const {
    return weights[((layer * heads + head) * seq + i) * seq + j];
  }
  std::span<const float> matrix(std::size_t layer, std::size_t head) const {
    return std::span<const float>(weights).subspan((layer * heads + head) * seq * seq,
                                                   std::size_t{seq} * seq);
  }

  // Shape, weights in [0, 1], zeros above the diagonal and row sums within
  // `row_tolerance` of 1. Throws a validation error naming the first problem.
  void check(double row_tolerance = 1e-3) const;
};

// "ATN1" | u32 layers | u32 heads | u32 seq | float32 weights, little-endian.
std::string encode_atn1(const AttentionDump& dump);
AttentionDump decode_atn1(const std::string& bytes, const std::string& source = "<memory>");
AttentionDump read_atn1(const std::string& path);
void write_atn1(const std::string& path, const AttentionDump& dump);

enum class OutputMode {
  attending,       // every position i >= 1
  assistant_only,  // positions labeled assistant
};

struct TokenTypeMap {
  std::vector<TokenType> labels;
  std::vector<std::size_t> output_positions;

  static TokenTypeMap with_outputs(std::vector<TokenType> labels, OutputMode mode);
  void check(std::size_t seq) const;
};

// {"labels": ["system", ...], "output_positions": [..]}; a missing
// output_positions falls back to `mode`.
TokenTypeMap parse_typemap(const std::string& json_text, OutputMode mode = OutputMode::attending,
                           const std::string& source = "<memory>");
TokenTypeMap load_typemap(const std::string& path, OutputMode mode = OutputMode::attending);

struct EfficiencyOptions {
  // Divide by the number of output positions as well, giving a per-output
  // average instead of a sum over outputs.
  bool per_output = false;
};

// Efficiency per token type; types with no labeled position stay empty.
using TypeEfficiency = std::array<std::optional<double>, kTokenTypes>;

// Heads are averaged first, then summed over each type's positions and over
// the output positions, then divided by the type's token count.
TypeEfficiency attention_efficiency(const AttentionDump& dump, const TokenTypeMap& map,
                                    std::size_t layer, const EfficiencyOptions& opt = {});

struct ReportRow {
  std::size_t layer = 0;
  TokenType type = TokenType::other;
  double epsilon = 0.0;

  bool operator==(const ReportRow&) const = default;
};

struct EfficiencyReport {
  std::string head_aggregation = "mean";
  bool per_output = false;
  std::size_t layers = 0;
  std::size_t output_count = 0;
  std::vector<ReportRow> rows;  // layer-major, types in enum order
  // Layer-averaged system vs user efficiency; empty when either type is
  // absent from the map.
  std::optional<bool> system_dominant;
  std::size_t layers_system_above_user = 0;
};

// Layers are processed in parallel.
EfficiencyReport efficiency_report(const AttentionDump& dump, const TokenTypeMap& map,
                                   const EfficiencyOptions& opt = {});
// Single-threaded reference with the same result.
EfficiencyReport efficiency_report_serial(const AttentionDump& dump, const TokenTypeMap& map,
                                          const EfficiencyOptions& opt = {});

std::string report_csv(const EfficiencyReport& report);
std::vector<ReportRow> parse_report_csv(const std::string& text,
                                        const std::string& source = "<memory>");
std::string report_summary_json(const EfficiencyReport& report);
// Human-readable table, one line per layer.
std::string report_table(const EfficiencyReport& report);

}  // namespace embkit::attn
