#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "udscreen/json_io.hpp"
#include "udscreen/ud_scorer.hpp"

namespace udscreen {

enum class ParticipantGroup { derm_le5y, derm_le10y, derm_gt10y, gp, student };

std::string to_string(ParticipantGroup g);
ParticipantGroup participant_group_from_string(const std::string& s);
const std::vector<ParticipantGroup>& all_participant_groups();

struct ParticipantProfile {
  std::string participant_id;
  ParticipantGroup group = ParticipantGroup::student;

  bool is_expert() const { return group == ParticipantGroup::derm_gt10y; }
  friend bool operator==(const ParticipantProfile&, const ParticipantProfile&) = default;
};

enum class Phase { unassisted, assisted };

std::string to_string(Phase p);
Phase phase_from_string(const std::string& s);

inline constexpr double kDefaultSnapIou = 0.30;
inline constexpr int kDefaultRankCutoff = 20;
inline constexpr int kDefaultMaxU = 50;

struct SnapMatch {
  std::size_t drawn_index = 0;
  std::string lesion_id;
  BoundingBox drawn;
  double iou = 0.0;
  friend bool operator==(const SnapMatch&, const SnapMatch&) = default;
};

struct SnapResult {
  std::vector<SnapMatch> matches;        // in drawn (priority) order
  std::vector<BoundingBox> unmatched;    // in drawn order
};

// One-to-one, greedy by descending IoU; ties go to the earlier drawn box,
// then the earlier detection.
SnapResult snap_selections(const std::vector<BoundingBox>& drawn, const std::vector<LesionBox>& detected,
                           double iou_min = kDefaultSnapIou);

struct SelectionRecord {
  std::string participant_id;
  std::string patient_id;
  Phase phase = Phase::unassisted;
  std::vector<std::string> selected;  // priority order
  int confidence = 1;
  std::vector<BoundingBox> unmatched_boxes;
  std::vector<SnapMatch> matches;     // snapping audit; may be empty for hand-built records

  void validate() const;
  friend bool operator==(const SelectionRecord&, const SelectionRecord&) = default;
};

SelectionRecord make_selection(std::string participant_id, std::string patient_id, Phase phase,
                               const SnapResult& snap, int confidence);

void to_json(Json& j, const ParticipantProfile& p);
void from_json(const Json& j, ParticipantProfile& p);
void to_json(Json& j, const SnapMatch& m);
void from_json(const Json& j, SnapMatch& m);
void to_json(Json& j, const SelectionRecord& r);
void from_json(const Json& j, SelectionRecord& r);

// Drops selections that are unranked (flagged or unknown) or ranked past the cutoff.
SelectionRecord exclude_for_eval(const SelectionRecord& selection, const std::vector<UDScore>& scores,
                                 int rank_cutoff = kDefaultRankCutoff);

enum class TruthKind { participant_self, expert_majority, ai_top_u };
std::string to_string(TruthKind k);

struct SensitivityReport {
  int tp = 0;
  int fn = 0;
  std::optional<double> sensitivity;
  std::string reason;  // set iff sensitivity is null
  std::string participant_id;
  std::string patient_id;
  std::optional<Phase> phase;
  TruthKind truth = TruthKind::participant_self;
};

void to_json(Json& j, const SensitivityReport& r);

// Participant picks are the truth; the AI top-u are the positives.
// Unmatched boxes count as misses.
SensitivityReport top_u_sensitivity(const SelectionRecord& selection, const std::vector<UDScore>& scores, int u);

// Lesions picked by at least two distinct experts in the given phase.
std::set<std::string> expert_majority(const std::vector<SelectionRecord>& selections,
                                      const std::vector<std::string>& experts, Phase phase = Phase::unassisted);

SensitivityReport participant_vs_majority(const SelectionRecord& selection, const std::set<std::string>& majority);

struct ParticipantSession {
  ParticipantProfile profile;
  std::vector<SelectionRecord> records;
};

void to_json(Json& j, const ParticipantSession& s);
void from_json(const Json& j, ParticipantSession& s);

// One JSON file per participant.
std::vector<ParticipantSession> read_sessions(const std::filesystem::path& dir);
void write_session(const std::filesystem::path& path, const ParticipantSession& session);

// patient_id -> embedder tag -> scores.
using ScoreSet = std::map<std::string, std::map<std::string, std::vector<UDScore>>>;

// Every *.jsonl file in dir is one patient's score list; the patient comes
// from the lesion ids, the tag from the records ("untagged" when absent).
ScoreSet read_score_dir(const std::filesystem::path& dir);
void add_scores(ScoreSet& set, const std::vector<UDScore>& scores);

struct Summary {
  std::size_t n = 0;
  std::optional<double> mean, q1, median, q3, iqr;
};

// Linear-interpolated quantiles over finite values.
Summary summarize(std::vector<double> values);
void to_json(Json& j, const Summary& s);

struct ReportOptions {
  Phase majority_phase = Phase::unassisted;
  int top_k = kDefaultTopK;
  std::map<std::string, int> k_overrides;  // per patient
  int rank_cutoff = kDefaultRankCutoff;
  int max_u = kDefaultMaxU;
  std::optional<std::string> embedder;  // which tag drives the main metrics
  bool include_ai = true;

  int k_for(const std::string& patient) const;
};

// The AI pseudo-participant's id and group label in reports.
inline constexpr const char* kAiParticipant = "ai";

// Aggregates over all sessions. Returns a JSON document with one table per
// panel and the per-image details they were built from.
Json study_report(const std::vector<ParticipantSession>& sessions, const ScoreSet& scores,
                  const ReportOptions& options = {});

// Writes report.json and one CSV per table into dir.
void write_report(const std::filesystem::path& dir, const Json& report);

}  // namespace udscreen
