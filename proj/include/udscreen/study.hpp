#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "udscreen/evaluation.hpp"
#include "udscreen/pipeline.hpp"

namespace udscreen::study {

// Errors carry the HTTP status the server answers with.
class ServiceError : public Error {
 public:
  ServiceError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

inline ServiceError bad_request(const std::string& w) { return {400, w}; }
inline ServiceError unauthorized(const std::string& w) { return {401, w}; }
inline ServiceError forbidden(const std::string& w) { return {403, w}; }
inline ServiceError not_found(const std::string& w) { return {404, w}; }
inline ServiceError protocol_error(const std::string& w) { return {409, w}; }
inline ServiceError rejected(const std::string& w) { return {422, w}; }

inline constexpr int kDefaultSelectionCap = 20;

struct Enrollment {
  ParticipantProfile profile;
  std::string token;
};

struct StudyDefinition {
  std::string study_id;
  std::vector<std::string> patient_ids;  // same list and order in both phases
  int selection_cap = kDefaultSelectionCap;
  int top_k = kDefaultTopK;  // red overlays
  std::map<std::string, int> k_overrides;
  std::vector<Enrollment> participants;
  std::string admin_token;
  PipelineConfig pipeline;

  void validate() const;
  int k_for(const std::string& patient) const;
  const Enrollment* find_participant(const std::string& id) const;
  bool has_patient(const std::string& id) const;
};

void to_json(Json& j, const Enrollment& e);
void from_json(const Json& j, Enrollment& e);
void to_json(Json& j, const StudyDefinition& d);
void from_json(const Json& j, StudyDefinition& d);

std::string sha256_hex(const void* data, std::size_t size);
inline std::string sha256_hex(const std::string& s) { return sha256_hex(s.data(), s.size()); }

// Content-addressed pipeline artifacts: <root>/<image hash>-<config hash>/
// holds detections.jsonl, embeddings.jsonl, scores.jsonl and status.json.
// Stage outputs are written as they finish, so a failed run keeps what it
// got to.
class PipelineCache {
 public:
  explicit PipelineCache(std::filesystem::path root);

  struct Outcome {
    std::string key;
    bool cache_hit = false;
    Json status;  // contents of status.json
    std::vector<LesionBox> lesions;
    std::vector<UDScore> scores;
    bool ok() const { return status.value("state", "") == "complete"; }
  };

  static std::string cache_key(const std::vector<std::uint8_t>& png_bytes, const std::string& patient_id,
                               const PipelineConfig& config);

  // Decodes the PNG (a decode failure is a detect-stage failure) and runs
  // the pipeline unless a complete artifact set exists. Runs for distinct
  // keys proceed in parallel; runs for one key are serialized.
  Outcome run(const std::vector<std::uint8_t>& png_bytes, const std::string& patient_id,
              const PipelineConfig& config);
  // Completed artifacts only; nullopt otherwise.
  std::optional<Outcome> lookup(const std::string& key) const;

  const std::filesystem::path& root() const { return root_; }

 private:
  std::shared_ptr<std::mutex> key_mutex(const std::string& key);

  std::filesystem::path root_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<std::mutex>> key_mutexes_;
};

// Append-only JSONL log. Each append is written and fsynced before it
// returns; a torn final line left by a crash is ignored on load.
class EventLog {
 public:
  explicit EventLog(std::filesystem::path path);
  std::vector<Json> load() const;
  void append(const Json& event);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

using RecordKey = std::tuple<std::string, std::string, Phase>;  // participant, patient, phase

// Materialized state: a fold over the log.
struct StudyState {
  std::map<RecordKey, SelectionRecord> records;
  std::map<RecordKey, int> revisions;  // how many times each record was submitted
  std::set<std::string> assisted_started;
  std::uint64_t next_seq = 0;

  void apply(const Json& event);
  static StudyState fold(const std::vector<Json>& events);
};

class StudyService {
 public:
  // Reads <data>/images/<patient>.png; writes <data>/events.jsonl and
  // <data>/artifacts/.
  StudyService(StudyDefinition definition, std::filesystem::path data_dir);

  const StudyDefinition& definition() const { return def_; }

  // nullptr when the token belongs to no participant.
  const Enrollment* participant_for_token(const std::string& token) const;
  bool is_admin_token(const std::string& token) const;

  Json patients(const std::string& participant_id) const;
  Json view(const std::string& participant_id, const std::string& patient_id, Phase phase);
  SelectionRecord submit(const std::string& participant_id, const std::string& patient_id, Phase phase,
                         const std::vector<BoundingBox>& drawn, int confidence);
  std::optional<SelectionRecord> selection(const std::string& participant_id, const std::string& patient_id,
                                           Phase phase) const;
  ReportOptions default_report_options() const;
  Json report(const ReportOptions& options);
  // Runs (or re-uses) the configured pipeline for a study patient.
  PipelineCache::Outcome run_pipeline(const std::string& patient_id);
  std::vector<std::uint8_t> image_png(const std::string& patient_id) const;

  std::vector<ParticipantSession> sessions() const;
  StudyState state() const;

 private:
  std::filesystem::path image_path(const std::string& patient_id) const;
  void require_patient(const std::string& patient_id) const;
  void require_participant(const std::string& participant_id) const;
  PipelineCache::Outcome scored(const std::string& patient_id);

  StudyDefinition def_;
  std::filesystem::path data_;
  PipelineCache cache_;
  EventLog log_;
  mutable std::mutex state_mutex_;
  StudyState state_;
};

// True if a view payload carries anything derived from the scorer. Used to
// assert blinding of unassisted views.
bool payload_has_score_data(const Json& payload);

}  // namespace udscreen::study
