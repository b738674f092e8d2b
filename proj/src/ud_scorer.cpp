#include "udscreen/ud_scorer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace udscreen {

void to_json(Json& j, const UDScore& s) {
  j = Json{{"lesion_id", s.lesion_id},
           {"raw_distance", s.raw_distance},
           {"score", s.score ? Json(*s.score) : Json(nullptr)},
           {"rank", s.rank ? Json(*s.rank) : Json(nullptr)},
           {"is_top_k", s.is_top_k}};
  if (s.illumination_flag) j["illumination_flag"] = true;
  if (s.embedder_tag) j["embedder_tag"] = to_string(*s.embedder_tag);
}

void from_json(const Json& j, UDScore& s) {
  s.lesion_id = j.at("lesion_id").get<std::string>();
  s.raw_distance = j.at("raw_distance").get<double>();
  const auto opt = [&](const char* key) -> const Json* {
    auto it = j.find(key);
    return it == j.end() || it->is_null() ? nullptr : &*it;
  };
  s.score = opt("score") ? std::optional<double>(opt("score")->get<double>()) : std::nullopt;
  s.rank = opt("rank") ? std::optional<int>(opt("rank")->get<int>()) : std::nullopt;
  s.is_top_k = j.at("is_top_k").get<bool>();
  s.illumination_flag = j.value("illumination_flag", false);
  s.embedder_tag = opt("embedder_tag")
                       ? std::optional<EmbedderTag>(embedder_tag_from_string(opt("embedder_tag")->get<std::string>()))
                       : std::nullopt;
}

std::vector<double> median_embedding(const std::vector<LesionEmbedding>& embeddings,
                                     const std::set<std::string>& excluded) {
  std::vector<const LesionEmbedding*> use;
  for (const auto& e : embeddings) {
    if (!excluded.count(e.lesion_id)) use.push_back(&e);
  }
  if (use.empty()) throw Error("median of an empty embedding set");
  const std::size_t d = use.front()->vector.size();
  for (const auto* e : use) {
    if (e->vector.size() != d) throw Error("embedding dimensions differ");
  }
  std::vector<double> median(d);
  std::vector<double> column(use.size());
  const std::size_t n = use.size();
  for (std::size_t k = 0; k < d; ++k) {
    for (std::size_t i = 0; i < n; ++i) column[i] = use[i]->vector[k];
    std::sort(column.begin(), column.end());
    median[k] = n % 2 ? column[n / 2] : 0.5 * (column[n / 2 - 1] + column[n / 2]);
  }
  return median;
}

double cosine_distance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw Error("cosine distance of vectors with different dimensions");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 1.0;
  return 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
}

ScoreResult score_lesions(const std::vector<LesionEmbedding>& embeddings, int k,
                          const std::set<std::string>& flagged) {
  if (embeddings.empty()) throw Error("no embeddings to score");
  if (k < 0) throw Error("k must be >= 0");
  {
    std::set<std::string> seen;
    for (const auto& e : embeddings) {
      if (!seen.insert(e.lesion_id).second) throw Error("duplicate lesion id " + e.lesion_id);
    }
  }
  ScoreResult r;
  r.median = median_embedding(embeddings, flagged);

  std::vector<UDScore> ranked, excluded;
  for (const auto& e : embeddings) {
    UDScore s;
    s.lesion_id = e.lesion_id;
    // Clamp rounding noise: identical directions give a tiny negative.
    s.raw_distance = std::max(0.0, cosine_distance(e.vector, r.median));
    s.embedder_tag = e.tag;
    if (flagged.count(e.lesion_id)) {
      s.illumination_flag = true;
      excluded.push_back(std::move(s));
    } else {
      ranked.push_back(std::move(s));
    }
  }

  const auto [lo, hi] = std::minmax_element(ranked.begin(), ranked.end(), [](const UDScore& a, const UDScore& b) {
    return a.raw_distance < b.raw_distance;
  });
  const double dmin = lo->raw_distance, dmax = hi->raw_distance;
  r.degenerate = dmax == dmin;
  if (r.degenerate) r.warning = "all UD distances are equal; scores set to 0 and ranked by lesion id";
  for (auto& s : ranked) s.score = r.degenerate ? 0.0 : (s.raw_distance - dmin) / (dmax - dmin);

  // Min-max scaling is monotone, so ranking on the raw distance is the same
  // order without the rounding ties the division can introduce.
  std::sort(ranked.begin(), ranked.end(), [&](const UDScore& a, const UDScore& b) {
    if (!r.degenerate && a.raw_distance != b.raw_distance) return a.raw_distance > b.raw_distance;
    return a.lesion_id < b.lesion_id;
  });
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    ranked[i].rank = static_cast<int>(i) + 1;
    ranked[i].is_top_k = static_cast<int>(i) < k;
  }
  std::sort(excluded.begin(), excluded.end(),
            [](const UDScore& a, const UDScore& b) { return a.lesion_id < b.lesion_id; });
  r.scores = std::move(ranked);
  r.scores.insert(r.scores.end(), excluded.begin(), excluded.end());
  return r;
}

std::vector<std::string> top_k_ids(const std::vector<UDScore>& scores, int k) {
  std::vector<const UDScore*> ranked;
  for (const auto& s : scores) {
    if (s.rank && *s.rank <= k) ranked.push_back(&s);
  }
  std::sort(ranked.begin(), ranked.end(), [](const UDScore* a, const UDScore* b) { return *a->rank < *b->rank; });
  std::vector<std::string> ids;
  for (const auto* s : ranked) ids.push_back(s->lesion_id);
  return ids;
}

void write_scores(const std::filesystem::path& path, const std::vector<UDScore>& scores) {
  std::vector<Json> records;
  records.reserve(scores.size());
  for (const auto& s : scores) records.emplace_back(s);
  write_jsonl(path, records);
}

std::vector<UDScore> read_scores(const std::filesystem::path& path) {
  std::vector<UDScore> out;
  for (const auto& rec : read_jsonl(path)) out.push_back(rec.get<UDScore>());
  return out;
}

}  // namespace udscreen
