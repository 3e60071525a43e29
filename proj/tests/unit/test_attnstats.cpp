#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "embkit/attnstats.hpp"
#include "embkit/error.hpp"
#include "oracles/attention_reference.hpp"

using namespace embkit;
using namespace embkit::attn;

namespace {

double eps_of(const TypeEfficiency& e, TokenType t) { return e[static_cast<std::size_t>(t)].value(); }

std::vector<TokenType> random_labels(Rng& rng, std::size_t seq) {
  std::vector<TokenType> labels(seq);
  for (auto& l : labels) l = static_cast<TokenType>(rng.index(kTokenTypes));
  return labels;
}

}  // namespace

TEST(Attention, UniformRowGivesEqualEfficiency) {
  // Position 3 attends a quarter to each of the 4 positions.
  AttentionDump d{1, 1, 4, std::vector<float>(16, 0.0F)};
  d.weights[0] = 1.0F;
  d.weights[4] = d.weights[5] = 0.5F;
  d.weights[8] = d.weights[9] = d.weights[10] = 1.0F / 3;
  for (int j = 0; j < 4; ++j) d.weights[12 + j] = 0.25F;
  d.check();
  TokenTypeMap m{{TokenType::system, TokenType::system, TokenType::user, TokenType::user}, {3}};
  auto e = attention_efficiency(d, m, 0);
  EXPECT_DOUBLE_EQ(eps_of(e, TokenType::system), 0.25);
  EXPECT_DOUBLE_EQ(eps_of(e, TokenType::user), 0.25);
  EXPECT_FALSE(e[static_cast<std::size_t>(TokenType::image)].has_value());
}

TEST(Attention, AllMassOnSystemLeavesUserAtZero) {
  AttentionDump d{1, 2, 3, std::vector<float>(18, 0.0F)};
  for (int h = 0; h < 2; ++h) {
    d.weights[h * 9 + 0] = 1.0F;
    d.weights[h * 9 + 3] = 1.0F;
    d.weights[h * 9 + 6] = 1.0F;
  }
  TokenTypeMap m = TokenTypeMap::with_outputs({TokenType::system, TokenType::user, TokenType::user},
                                              OutputMode::attending);
  auto e = attention_efficiency(d, m, 0);
  EXPECT_EQ(eps_of(e, TokenType::user), 0.0);
  EXPECT_DOUBLE_EQ(eps_of(e, TokenType::system), 2.0);
}

TEST(Attention, MatchesTripleLoopOracle) {
  Rng rng(12);
  for (int trial = 0; trial < 25; ++trial) {
    auto d = oracle::random_dump(rng, 2, 2, 6);
    d.check();
    auto m = TokenTypeMap::with_outputs(random_labels(rng, 6), OutputMode::attending);
    for (std::size_t l = 0; l < 2; ++l) {
      auto e = attention_efficiency(d, m, l);
      for (std::size_t t = 0; t < kTokenTypes; ++t) {
        if (!e[t]) continue;
        EXPECT_NEAR(*e[t], static_cast<double>(oracle::efficiency_triple_loop(d, m, l, static_cast<TokenType>(t))),
                    1e-7);
      }
    }
  }
}

TEST(Attention, PartitionCompleteness) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto d = oracle::random_dump(rng, 3, 4, 9);
    auto m = TokenTypeMap::with_outputs(random_labels(rng, 9), OutputMode::attending);
    std::array<std::size_t, kTokenTypes> counts{};
    for (auto t : m.labels) ++counts[static_cast<std::size_t>(t)];
    for (std::size_t l = 0; l < 3; ++l) {
      auto e = attention_efficiency(d, m, l);
      double lhs = 0.0;
      for (std::size_t t = 0; t < kTokenTypes; ++t) {
        if (e[t]) lhs += *e[t] * static_cast<double>(counts[t]);
      }
      double rhs = 0.0;
      for (auto i : m.output_positions) {
        for (std::size_t h = 0; h < 4; ++h) {
          for (std::size_t p = 0; p < 9; ++p) rhs += d.at(l, h, i, p) / 4.0;
        }
      }
      EXPECT_NEAR(lhs, rhs, 1e-6);
    }
  }
}

TEST(Attention, RelabelingSwapsValues) {
  Rng rng(14);
  auto d = oracle::random_dump(rng, 1, 3, 7);
  auto labels = random_labels(rng, 7);
  labels[0] = TokenType::system;
  labels[1] = TokenType::user;
  auto swapped = labels;
  for (auto& l : swapped) {
    if (l == TokenType::system) {
      l = TokenType::user;
    } else if (l == TokenType::user) {
      l = TokenType::system;
    }
  }
  auto a = attention_efficiency(d, TokenTypeMap::with_outputs(labels, OutputMode::attending), 0);
  auto b = attention_efficiency(d, TokenTypeMap::with_outputs(swapped, OutputMode::attending), 0);
  EXPECT_EQ(eps_of(a, TokenType::system), eps_of(b, TokenType::user));
  EXPECT_EQ(eps_of(a, TokenType::user), eps_of(b, TokenType::system));
}

TEST(Attention, HeadAverageIsMeanOfPerHeadValues) {
  Rng rng(15);
  auto d = oracle::random_dump(rng, 1, 4, 8);
  auto m = TokenTypeMap::with_outputs(random_labels(rng, 8), OutputMode::attending);
  auto all = attention_efficiency(d, m, 0);
  std::array<double, kTokenTypes> mean{};
  for (std::uint32_t h = 0; h < 4; ++h) {
    AttentionDump one{1, 1, 8, {}};
    auto mat = d.matrix(0, h);
    one.weights.assign(mat.begin(), mat.end());
    auto e = attention_efficiency(one, m, 0);
    for (std::size_t t = 0; t < kTokenTypes; ++t) {
      if (e[t]) mean[t] += *e[t] / 4;
    }
  }
  for (std::size_t t = 0; t < kTokenTypes; ++t) {
    if (all[t]) {
      EXPECT_NEAR(*all[t], mean[t], 1e-12);
    }
  }
}

TEST(Attention, PerOutputDividesByOutputCount) {
  Rng rng(16);
  auto d = oracle::random_dump(rng, 1, 2, 5);
  auto m = TokenTypeMap::with_outputs(random_labels(rng, 5), OutputMode::attending);
  auto sum = attention_efficiency(d, m, 0);
  auto avg = attention_efficiency(d, m, 0, EfficiencyOptions{true});
  for (std::size_t t = 0; t < kTokenTypes; ++t) {
    if (sum[t]) {
      EXPECT_NEAR(*avg[t], *sum[t] / 4.0, 1e-15);
    }
  }
}

TEST(Attention, Errors) {
  Rng rng(17);
  auto d = oracle::random_dump(rng, 1, 1, 4);
  TokenTypeMap empty{{TokenType::user, TokenType::user, TokenType::user, TokenType::user}, {}};
  EXPECT_THROW(attention_efficiency(d, empty, 0), Error);
  TokenTypeMap short_map{{TokenType::user}, {0}};
  EXPECT_THROW(attention_efficiency(d, short_map, 0), Error);
  TokenTypeMap ok = TokenTypeMap::with_outputs(empty.labels, OutputMode::attending);
  EXPECT_THROW(attention_efficiency(d, ok, 1), Error);
  // Assistant-only mode without assistant tokens has no outputs.
  EXPECT_THROW(attention_efficiency(d, TokenTypeMap::with_outputs(empty.labels, OutputMode::assistant_only), 0),
               Error);
}

TEST(AttentionDump, CheckCatchesBadDumps) {
  Rng rng(18);
  auto d = oracle::random_dump(rng, 2, 2, 5);
  EXPECT_NO_THROW(d.check());
  auto noncausal = d;
  noncausal.weights[1] = 0.1F;
  EXPECT_THROW(noncausal.check(), Error);
  auto bad_sum = d;
  bad_sum.weights[0] = 0.5F;
  EXPECT_THROW(bad_sum.check(), Error);
  auto bad_shape = d;
  bad_shape.weights.pop_back();
  EXPECT_THROW(bad_shape.check(), Error);
}

TEST(AttentionDump, Atn1RoundTrip) {
  Rng rng(19);
  auto d = oracle::random_dump(rng, 2, 3, 4);
  const auto bytes = encode_atn1(d);
  EXPECT_EQ(bytes.size(), 16u + 2 * 3 * 16 * 4);
  EXPECT_EQ(bytes.substr(0, 4), "ATN1");
  auto back = decode_atn1(bytes);
  EXPECT_EQ(back.weights, d.weights);
  EXPECT_EQ(back.seq, 4u);
  EXPECT_THROW(decode_atn1(bytes.substr(0, bytes.size() - 1)), Error);
  EXPECT_THROW(decode_atn1("ATN0" + bytes.substr(4)), Error);

  const auto path = (std::filesystem::temp_directory_path() / "embkit_attn_test.atn").string();
  write_atn1(path, d);
  EXPECT_EQ(read_atn1(path).weights, d.weights);
  std::filesystem::remove(path);
}

TEST(TypeMap, ParsesJson) {
  auto m = parse_typemap(R"({"labels":["system","user","assistant"],"output_positions":[2]})");
  EXPECT_EQ(m.labels.size(), 3u);
  EXPECT_EQ(m.output_positions, std::vector<std::size_t>{2});
  auto dflt = parse_typemap(R"({"labels":["system","user","assistant"]})");
  EXPECT_EQ(dflt.output_positions, (std::vector<std::size_t>{1, 2}));
  auto asst = parse_typemap(R"({"labels":["system","user","assistant"]})", OutputMode::assistant_only);
  EXPECT_EQ(asst.output_positions, std::vector<std::size_t>{2});
  EXPECT_THROW(parse_typemap(R"({"labels":["bogus"]})"), Error);
  EXPECT_THROW(parse_typemap("not json"), Error);
}

TEST(Report, SystemDominantDumpIsFlagged) {
  auto [d, m] = oracle::system_heavy_dump();
  d.check();
  auto r = efficiency_report(d, m);
  ASSERT_TRUE(r.system_dominant.has_value());
  EXPECT_TRUE(*r.system_dominant);
  EXPECT_EQ(r.layers_system_above_user, 4u);

  auto [d2, m2] = oracle::system_heavy_dump(0.05);
  auto r2 = efficiency_report(d2, m2);
  EXPECT_FALSE(*r2.system_dominant);
}

TEST(Report, SingleLayerHasOneRowPerType) {
  Rng rng(20);
  auto d = oracle::random_dump(rng, 1, 2, 6);
  auto m = TokenTypeMap::with_outputs({TokenType::system, TokenType::user, TokenType::user,
                                       TokenType::image, TokenType::image, TokenType::assistant},
                                      OutputMode::attending);
  auto r = efficiency_report(d, m);
  EXPECT_EQ(r.rows.size(), 4u);
  EXPECT_EQ(r.layers, 1u);
}

TEST(Report, ParallelMatchesSerial) {
  Rng rng(21);
  auto d = oracle::random_dump(rng, 12, 4, 16);
  auto m = TokenTypeMap::with_outputs(random_labels(rng, 16), OutputMode::attending);
  auto a = efficiency_report(d, m);
  auto b = efficiency_report_serial(d, m);
  EXPECT_EQ(a.rows, b.rows);
  EXPECT_EQ(a.system_dominant, b.system_dominant);
}

TEST(Report, CsvRoundTripsLosslessly) {
  Rng rng(22);
  auto d = oracle::random_dump(rng, 5, 2, 10);
  auto m = TokenTypeMap::with_outputs(random_labels(rng, 10), OutputMode::attending);
  auto r = efficiency_report(d, m);
  const auto csv = report_csv(r);
  EXPECT_EQ(csv.rfind("layer,type,epsilon\n", 0), 0u);
  EXPECT_EQ(parse_report_csv(csv), r.rows);
  EXPECT_THROW(parse_report_csv("layer,type,epsilon\n0,system\n"), Error);
  EXPECT_THROW(parse_report_csv("a,b,c\n"), Error);
}

TEST(Report, SummaryJson) {
  auto [d, m] = oracle::system_heavy_dump();
  const auto s = report_summary_json(efficiency_report(d, m));
  EXPECT_NE(s.find("\"system_dominant\":true"), std::string::npos);
  EXPECT_NE(s.find("\"head_aggregation\":\"mean\""), std::string::npos);
}
