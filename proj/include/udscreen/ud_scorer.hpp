#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "udscreen/embedder.hpp"

namespace udscreen {

inline constexpr int kDefaultTopK = 10;

struct UDScore {
  std::string lesion_id;
  double raw_distance = 0.0;
  // Unset for illumination-flagged lesions, which are never ranked.
  std::optional<double> score;
  std::optional<int> rank;
  bool is_top_k = false;
  bool illumination_flag = false;
  std::optional<EmbedderTag> embedder_tag;
};

void to_json(Json& j, const UDScore& s);
void from_json(const Json& j, UDScore& s);

// Coordinate-wise median; even counts take the midpoint. Not re-normalized.
std::vector<double> median_embedding(const std::vector<LesionEmbedding>& embeddings,
                                     const std::set<std::string>& excluded = {});

// 1 - cosine similarity; a zero vector has similarity 0 with everything.
double cosine_distance(const std::vector<double>& a, const std::vector<double>& b);

struct ScoreResult {
  // Ranked lesions first (rank 1..n), then flagged lesions by lesion_id.
  std::vector<UDScore> scores;
  std::vector<double> median;
  // Set when all distances are equal and every score is defined as 0.
  bool degenerate = false;
  std::string warning;
};

ScoreResult score_lesions(const std::vector<LesionEmbedding>& embeddings, int k = kDefaultTopK,
                          const std::set<std::string>& flagged = {});

// Ordered lesion ids of the top-k ranked lesions.
std::vector<std::string> top_k_ids(const std::vector<UDScore>& scores, int k = kDefaultTopK);

void write_scores(const std::filesystem::path& path, const std::vector<UDScore>& scores);
std::vector<UDScore> read_scores(const std::filesystem::path& path);

}  // namespace udscreen
