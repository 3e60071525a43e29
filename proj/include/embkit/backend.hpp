#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "embkit/model.hpp"
#include "embkit/prompts.hpp"

namespace embkit::backend {

/// HTTP embedding server. Each request is
///   POST <url> {"conversation": [...], "model": ...}
/// and must answer 200 with {"embedding": [floats]}.
struct BackendEndpoint {
  std::string url = "http://127.0.0.1:8080/embed";
  std::string model;  // sent only when non-empty
  double timeout_seconds = 30.0;
  std::size_t max_in_flight = 8;
  std::size_t attempts = 3;
  double backoff_seconds = 0.25;  // doubled after every failed attempt
  std::size_t expected_dim = 0;   // 0: take the first response's dimension

  void check() const;
};

struct FetchItem {
  std::string id;
  std::string conversation_json;  // prompts::to_json output
};

enum class Side { query, candidate };

std::vector<FetchItem> render_items(const Dataset& ds, Side side,
                                    const prompts::PromptOptions& options);

// Fetches every item with up to max_in_flight concurrent requests and
// reassembles rows in item order. Throws if any item still fails after
// its retries, or if a response's dimension differs from the others.
EmbeddingMatrix fetch_embeddings(const std::vector<FetchItem>& items,
                                 const BackendEndpoint& endpoint);

}  // namespace embkit::backend
