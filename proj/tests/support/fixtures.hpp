#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "udscreen/evaluation.hpp"
#include "udscreen/synthgen.hpp"

namespace testsupport {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

// Reference greedy NMS written independently of the library: a box is kept
// iff no kept box of higher priority overlaps it beyond the threshold.
std::vector<udscreen::LesionBox> reference_nms(std::vector<udscreen::LesionBox> boxes, double threshold,
                                               const std::string& patient_id);

// Scripted reader study: five personas (three experts, one junior
// dermatologist, one student) reading five patients in both phases, with
// selections snapped onto per-patient detections. Includes an empty
// selection, two missing phase pairs, unmatched boxes, picks past the rank
// cutoff, flagged picks and a per-patient k override.
struct StudyFixture {
  std::vector<udscreen::ParticipantSession> sessions;
  udscreen::ScoreSet scores;
  std::map<std::string, std::vector<udscreen::LesionBox>> detections;
  std::map<std::string, int> k_overrides;
  std::filesystem::path sessions_dir;
  std::filesystem::path scores_dir;
};

// two_embedders adds a second score list per patient under another tag.
StudyFixture make_study_fixture(const std::filesystem::path& dir, std::uint64_t seed, bool two_embedders);

// Independent recomputation of the study report from the raw JSON files
// alone. Produces "tables", "expert_majority" and "details" in the same
// layout as the library report.
nlohmann::json oracle_report(const std::filesystem::path& sessions_dir, const std::filesystem::path& scores_dir,
                             const std::string& majority_phase, int top_k, const std::map<std::string, int>& k_overrides,
                             int rank_cutoff, int max_u, bool include_ai);

// Small shadow-free dossier for fast end-to-end tests.
udscreen::synth::SynthConfig small_dossier(std::uint64_t seed, int n_lesions, int n_outliers = 3,
                                           int width = 1536, int height = 2048);

}  // namespace testsupport
