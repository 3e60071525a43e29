#include "embkit/backend.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <optional>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "embkit/error.hpp"

namespace embkit::backend {

namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || url.compare(0, scheme, "http") != 0) {
    throw Error(ErrorKind::config, "backend url must start with http://, got '" + url + "'");
  }
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

struct Outcome {
  std::vector<float> vector;
  std::string error;  // empty on success
};

Outcome fetch_one(httplib::Client& client, const std::string& path, const std::string& body,
                  const BackendEndpoint& ep) {
  std::string last_error;
  double wait = ep.backoff_seconds;
  for (std::size_t attempt = 0; attempt < ep.attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
      wait *= 2;
    }
    auto res = client.Post(path, body, "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    try {
      const auto j = nlohmann::json::parse(res->body);
      Outcome ok;
      ok.vector = j.at("embedding").get<std::vector<float>>();
      if (ok.vector.empty()) {
        last_error = "empty embedding";
        continue;
      }
      return ok;
    } catch (const nlohmann::json::exception& e) {
      last_error = std::string("bad response: ") + e.what();
    }
  }
  return {{}, last_error};
}

}  // namespace

void BackendEndpoint::check() const {
  split_url(url);
  if (max_in_flight == 0) throw Error(ErrorKind::config, "max_in_flight must be positive");
  if (attempts == 0) throw Error(ErrorKind::config, "attempts must be positive");
  if (!(timeout_seconds > 0.0)) throw Error(ErrorKind::config, "timeout must be positive");
  if (!(backoff_seconds >= 0.0)) throw Error(ErrorKind::config, "backoff must be >= 0");
}

std::vector<FetchItem> render_items(const Dataset& ds, Side side,
                                    const prompts::PromptOptions& options) {
  std::vector<FetchItem> items;
  if (side == Side::query) {
    for (const auto& q : ds.queries) items.push_back({q.qid, prompts::to_json(prompts::render(q, options))});
  } else {
    for (const auto& c : ds.candidates) {
      items.push_back({c.did, prompts::to_json(prompts::render(c, options))});
    }
  }
  return items;
}

EmbeddingMatrix fetch_embeddings(const std::vector<FetchItem>& items, const BackendEndpoint& ep) {
  ep.check();
  if (items.empty()) throw Error(ErrorKind::validation, "nothing to fetch");
  const Url url = split_url(ep.url);

  std::vector<std::string> bodies(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    nlohmann::ordered_json body;
    body["conversation"] = nlohmann::ordered_json::parse(items[i].conversation_json);
    if (!ep.model.empty()) body["model"] = ep.model;
    bodies[i] = body.dump();
  }

  std::vector<Outcome> outcomes(items.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    httplib::Client client(url.origin);
    const auto timeout = std::chrono::duration<double>(ep.timeout_seconds);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_keep_alive(true);
    client.set_tcp_nodelay(true);
    for (std::size_t i = next++; i < items.size(); i = next++) {
      outcomes[i] = fetch_one(client, url.path, bodies[i], ep);
    }
  };
  const std::size_t n_workers = std::min(ep.max_in_flight, items.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  // Report in item order so the first failure is deterministic.
  std::size_t dim = ep.expected_dim;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!outcomes[i].error.empty()) {
      throw Error(ErrorKind::backend, "embedding for '" + items[i].id + "' failed after " +
                                          std::to_string(ep.attempts) +
                                          " attempts: " + outcomes[i].error);
    }
    if (dim == 0) dim = outcomes[i].vector.size();
    if (outcomes[i].vector.size() != dim) {
      throw Error(ErrorKind::dimension_mismatch,
                  "dimension drift: '" + items[i].id + "' returned " +
                      std::to_string(outcomes[i].vector.size()) + " values, expected " +
                      std::to_string(dim));
    }
  }
  std::vector<std::string> ids;
  std::vector<float> values;
  values.reserve(items.size() * dim);
  for (std::size_t i = 0; i < items.size(); ++i) {
    ids.push_back(items[i].id);
    values.insert(values.end(), outcomes[i].vector.begin(), outcomes[i].vector.end());
  }
  return EmbeddingMatrix(std::move(ids), dim, std::move(values));
}

}  // namespace embkit::backend
