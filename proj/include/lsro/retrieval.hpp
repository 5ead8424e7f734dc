#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lsro/dataset.hpp"
#include "lsro/tensor.hpp"

namespace lsro {

enum class QueryMode { single, multi };

inline std::string_view mode_name(QueryMode m) { return m == QueryMode::single ? "single" : "multi"; }

inline QueryMode parse_mode(std::string_view s) {
  if (s == "single") return QueryMode::single;
  if (s == "multi") return QueryMode::multi;
  throw std::invalid_argument("unknown query mode '" + std::string(s) + "'");
}

struct RetrievalMetrics {
  std::vector<double> cmc;  // cmc[k-1] = rank-k accuracy
  double map = 0.0;
  std::vector<double> per_query_ap;  // valid queries only, in query order
  std::size_t num_valid_queries = 0;
  std::size_t num_invalid_queries = 0;

  double rank(std::size_t k) const {
    if (k == 0 || cmc.empty()) throw std::out_of_range("rank: k must lie in [1, k_max]");
    return cmc[std::min(k, cmc.size()) - 1];
  }
};

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw std::invalid_argument("cosine_similarity: widths " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " differ");
  }
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine_similarity: zero vector (degenerate embedding)");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

struct RankedGallery {
  std::vector<std::size_t> order;     // kept gallery indices, best first
  std::vector<std::size_t> excluded;  // same identity and same camera
  std::vector<bool> relevant;         // aligned with order

  bool valid() const { return std::find(relevant.begin(), relevant.end(), true) != relevant.end(); }
};

/// Ranks the gallery by descending cosine similarity to the query. Gallery
/// items sharing both identity and camera with the query are dropped; ties
/// go to the lower gallery index.
inline RankedGallery rank_gallery(const Sample& query, const Samples& gallery) {
  RankedGallery out;
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(gallery.size());
  for (std::size_t g = 0; g < gallery.size(); ++g) {
    if (gallery[g].identity == query.identity && gallery[g].camera == query.camera) {
      out.excluded.push_back(g);
      continue;
    }
    scored.emplace_back(cosine_similarity(query.features, gallery[g].features), g);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  for (const auto& [_, g] : scored) {
    out.order.push_back(g);
    out.relevant.push_back(gallery[g].identity == query.identity);
  }
  return out;
}

/// Mean of precision@r over relevant positions r; NaN when nothing is
/// relevant (the query is invalid).
inline double average_precision(const std::vector<bool>& relevant) {
  std::size_t hits = 0;
  double acc = 0.0;
  for (std::size_t i = 0; i < relevant.size(); ++i) {
    if (!relevant[i]) continue;
    ++hits;
    acc += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  if (hits == 0) return std::nan("");
  return acc / static_cast<double>(hits);
}

// cmc[k-1]: fraction of lists whose first relevant item is within the top k.
inline std::vector<double> cmc_curve(const std::vector<std::vector<bool>>& lists, std::size_t k_max) {
  std::vector<double> cmc(k_max, 0.0);
  if (lists.empty()) return cmc;
  std::vector<std::size_t> first_hit_count(k_max, 0);
  for (const auto& rel : lists) {
    const auto it = std::find(rel.begin(), rel.end(), true);
    if (it == rel.end()) continue;
    const auto pos = static_cast<std::size_t>(it - rel.begin());
    if (pos < k_max) ++first_hit_count[pos];
  }
  std::size_t running = 0;
  for (std::size_t k = 0; k < k_max; ++k) {
    running += first_hit_count[k];
    cmc[k] = static_cast<double>(running) / static_cast<double>(lists.size());
  }
  return cmc;
}

// Mean-pools query embeddings sharing (identity, camera), in order of first
// appearance.
inline Samples pool_queries(const Samples& queries) {
  std::map<std::pair<std::int32_t, std::int32_t>, std::size_t> slot;
  Samples pooled;
  std::vector<std::size_t> counts;
  for (const auto& q : queries) {
    const auto key = std::make_pair(q.identity, q.camera);
    auto [it, fresh] = slot.emplace(key, pooled.size());
    if (fresh) {
      pooled.push_back(q);
      counts.push_back(1);
      continue;
    }
    auto& acc = pooled[it->second].features;
    for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += q.features[j];
    ++counts[it->second];
  }
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    if (counts[i] == 1) continue;
    for (auto& v : pooled[i].features) v /= static_cast<double>(counts[i]);
  }
  return pooled;
}

/// Retrieval evaluation over embedded queries and gallery (features hold the
/// embeddings). Queries without any cross-camera match are excluded and
/// counted as invalid.
inline RetrievalMetrics evaluate(const Samples& queries, const Samples& gallery, QueryMode mode,
                                 std::size_t k_max = 20) {
  if (k_max == 0) throw std::invalid_argument("evaluate: k_max must be >= 1");
  if (!queries.empty() && !gallery.empty() &&
      queries.front().features.size() != gallery.front().features.size()) {
    throw std::invalid_argument("evaluate: query and gallery embedding widths differ");
  }
  const Samples pooled = mode == QueryMode::multi ? pool_queries(queries) : Samples{};
  const Samples& probes = mode == QueryMode::multi ? pooled : queries;

  RetrievalMetrics m;
  std::vector<std::vector<bool>> lists;
  for (const auto& q : probes) {
    auto ranked = rank_gallery(q, gallery);
    if (!ranked.valid()) {
      ++m.num_invalid_queries;
      continue;
    }
    m.per_query_ap.push_back(average_precision(ranked.relevant));
    lists.push_back(std::move(ranked.relevant));
  }
  m.num_valid_queries = lists.size();
  if (lists.empty()) {
    throw std::runtime_error("evaluate: no valid queries (" + std::to_string(m.num_invalid_queries) +
                             " queries have no cross-camera match in the gallery)");
  }
  m.cmc = cmc_curve(lists, k_max);
  m.map = std::accumulate(m.per_query_ap.begin(), m.per_query_ap.end(), 0.0) /
          static_cast<double>(m.per_query_ap.size());
  return m;
}

/// Expected AP of a uniformly random ranking of G items with R relevant:
/// H_G / G + (R-1)(G - H_G) / (G(G-1)), H_G the G-th harmonic number.
inline double expected_random_ap(std::size_t gallery_size, std::size_t relevant) {
  if (relevant == 0 || relevant > gallery_size) {
    throw std::invalid_argument("expected_random_ap: need 1 <= R <= G");
  }
  const double g = static_cast<double>(gallery_size);
  double harmonic = 0.0;
  for (std::size_t i = 1; i <= gallery_size; ++i) harmonic += 1.0 / static_cast<double>(i);
  if (gallery_size == 1) return 1.0;
  return harmonic / g + (static_cast<double>(relevant) - 1.0) * (g - harmonic) / (g * (g - 1.0));
}

// Fraction of rows whose argmax (ties to the smallest index) equals the label.
inline double top1_accuracy(const Tensor& probs, std::span<const std::size_t> labels) {
  if (probs.rows() != labels.size()) {
    throw std::invalid_argument("top1_accuracy: " + std::to_string(probs.rows()) + " rows vs " +
                                std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) return 0.0;
  const std::size_t c = probs.cols();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = probs.data().subspan(i * c, c);
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k) {
      if (row[k] > row[best]) best = k;
    }
    if (best == labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

inline std::string format_fixed(double v, int decimals = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

/// CSV rows "mode,k,value": one per CMC rank, then map and
/// num_valid_queries.
inline std::string metrics_csv(const RetrievalMetrics& m, QueryMode mode) {
  std::string out = "mode,k,value\n";
  const std::string name(mode_name(mode));
  for (std::size_t k = 0; k < m.cmc.size(); ++k) {
    out += name + "," + std::to_string(k + 1) + "," + format_fixed(m.cmc[k]) + "\n";
  }
  out += name + ",map," + format_fixed(m.map) + "\n";
  out += name + ",num_valid_queries," + std::to_string(m.num_valid_queries) + "\n";
  return out;
}

}  // namespace lsro
