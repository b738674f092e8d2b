#include "udscreen/study.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "udscreen/image_io.hpp"

namespace udscreen::study {

namespace {

bool safe_id(const std::string& id) {
  return !id.empty() && id != "." && id != ".." && id.find_first_of("/\\") == std::string::npos &&
         id.find('\0') == std::string::npos;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void StudyDefinition::validate() const {
  if (study_id.empty()) throw Error("study_id is empty");
  if (patient_ids.empty()) throw Error("study has no patients");
  std::set<std::string> seen;
  for (const auto& p : patient_ids) {
    if (!safe_id(p)) throw Error("patient id '" + p + "' cannot name a file");
    if (!seen.insert(p).second) throw Error("patient " + p + " listed twice");
  }
  if (selection_cap < 1) throw Error("selection_cap must be >= 1");
  if (top_k < 1) throw Error("top_k must be >= 1");
  for (const auto& [p, k] : k_overrides) {
    if (!seen.count(p)) throw Error("k override for unknown patient " + p);
    if (k < 1) throw Error("k override must be >= 1");
  }
  if (admin_token.empty()) throw Error("admin_token is empty");
  std::set<std::string> ids, tokens{admin_token};
  for (const auto& e : participants) {
    if (e.profile.participant_id.empty() || e.profile.participant_id == kAiParticipant) {
      throw Error("invalid participant id '" + e.profile.participant_id + "'");
    }
    if (!ids.insert(e.profile.participant_id).second) throw Error("participant " + e.profile.participant_id + " enrolled twice");
    if (e.token.empty() || !tokens.insert(e.token).second) throw Error("participant tokens must be non-empty and unique");
  }
}

int StudyDefinition::k_for(const std::string& patient) const {
  auto it = k_overrides.find(patient);
  return it == k_overrides.end() ? top_k : it->second;
}

const Enrollment* StudyDefinition::find_participant(const std::string& id) const {
  for (const auto& e : participants) {
    if (e.profile.participant_id == id) return &e;
  }
  return nullptr;
}

bool StudyDefinition::has_patient(const std::string& id) const {
  return std::find(patient_ids.begin(), patient_ids.end(), id) != patient_ids.end();
}

void to_json(Json& j, const Enrollment& e) {
  j = e.profile;
  j["token"] = e.token;
}

void from_json(const Json& j, Enrollment& e) {
  e.profile = j.get<ParticipantProfile>();
  e.token = j.at("token").get<std::string>();
}

void to_json(Json& j, const StudyDefinition& d) {
  Json overrides = Json::object();
  for (const auto& [p, k] : d.k_overrides) overrides[p] = k;
  j = Json{{"study_id", d.study_id},
           {"patient_ids", d.patient_ids},
           {"selection_cap", d.selection_cap},
           {"top_k", d.top_k},
           {"k_overrides", overrides},
           {"participants", d.participants},
           {"admin_token", d.admin_token},
           {"pipeline", d.pipeline}};
}

void from_json(const Json& j, StudyDefinition& d) {
  d.study_id = j.at("study_id").get<std::string>();
  d.patient_ids = j.at("patient_ids").get<std::vector<std::string>>();
  d.selection_cap = j.value("selection_cap", d.selection_cap);
  d.top_k = j.value("top_k", d.top_k);
  d.k_overrides = j.value("k_overrides", std::map<std::string, int>{});
  d.participants = j.value("participants", std::vector<Enrollment>{});
  d.admin_token = j.at("admin_token").get<std::string>();
  if (auto it = j.find("pipeline"); it != j.end()) it->get_to(d.pipeline);
  d.validate();
}

std::string sha256_hex(const void* data, std::size_t size) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data, size, digest, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 failed");
  std::ostringstream out;
  out << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) out << std::setw(2) << static_cast<int>(digest[i]);
  return out.str();
}

PipelineCache::PipelineCache(std::filesystem::path root) : root_(std::move(root)) {
  std::filesystem::create_directories(root_);
}

std::string PipelineCache::cache_key(const std::vector<std::uint8_t>& png_bytes, const std::string& patient_id,
                                     const PipelineConfig& config) {
  // Lesion ids embed the patient id, so it belongs in the key too.
  const Json cfg{{"patient_id", patient_id}, {"config", config}};
  return sha256_hex(png_bytes.data(), png_bytes.size()) + "-" + sha256_hex(cfg.dump());
}

std::shared_ptr<std::mutex> PipelineCache::key_mutex(const std::string& key) {
  std::lock_guard lock(mutex_);
  auto& m = key_mutexes_[key];
  if (!m) m = std::make_shared<std::mutex>();
  return m;
}

std::optional<PipelineCache::Outcome> PipelineCache::lookup(const std::string& key) const {
  const auto dir = root_ / key;
  if (!std::filesystem::exists(dir / "status.json")) return std::nullopt;
  Outcome o;
  o.key = key;
  o.status = read_json_file(dir / "status.json");
  if (!o.ok()) return std::nullopt;
  o.lesions = detection::read_detections(dir / "detections.jsonl").lesions;
  o.scores = read_scores(dir / "scores.jsonl");
  o.cache_hit = true;
  return o;
}

PipelineCache::Outcome PipelineCache::run(const std::vector<std::uint8_t>& png_bytes, const std::string& patient_id,
                                          const PipelineConfig& config) {
  const std::string key = cache_key(png_bytes, patient_id, config);
  const auto guard = key_mutex(key);
  std::lock_guard lock(*guard);
  if (auto hit = lookup(key)) return *hit;

  const auto dir = root_ / key;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  Outcome o;
  o.key = key;
  o.status = Json{{"state", "running"}, {"patient_id", patient_id}, {"config", config}};
  write_json_file(dir / "status.json", o.status);

  try {
    WideFieldImage image;
    image.patient_id = patient_id;
    try {
      image.image = decode_png(png_bytes);
    } catch (const std::exception& e) {
      throw PipelineError("detect", e.what());
    }
    const auto result = run_pipeline(image, config, nullptr, [&](const std::string& stage, const PipelineResult& r) {
      if (stage == "detect" || stage == "filter") {
        detection::write_detections(dir / "detections.jsonl", r.header, r.lesions);
      } else if (stage == "embed") {
        write_embeddings(dir / "embeddings.jsonl", r.embeddings);
      } else if (stage == "score") {
        write_scores(dir / "scores.jsonl", r.scores);
      }
    });
    o.lesions = result.lesions;
    o.scores = result.scores;
    o.status = Json{{"state", "complete"},
                    {"patient_id", patient_id},
                    {"config", config},
                    {"n_lesions", result.lesions.size()},
                    {"epochs_run", result.epochs_run},
                    {"warnings", result.warnings}};
  } catch (const PipelineError& e) {
    o.status["state"] = "failed";
    o.status["failed_stage"] = e.stage();
    o.status["error"] = e.what();
  }
  write_json_file(dir / "status.json", o.status);
  return o;
}

EventLog::EventLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  if (!std::filesystem::exists(path_)) return;
  // Drop a torn tail so the next append starts on a fresh line.
  const std::string text = read_file(path_);
  if (!text.empty() && text.back() != '\n') {
    const auto cut = text.rfind('\n');
    std::filesystem::resize_file(path_, cut == std::string::npos ? 0 : cut + 1);
  }
}

std::vector<Json> EventLog::load() const {
  std::vector<Json> events;
  if (!std::filesystem::exists(path_)) return events;
  std::istringstream in(read_file(path_));
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      events.push_back(Json::parse(line));
    } catch (const Json::exception& e) {
      throw Error(path_.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return events;
}

void EventLog::append(const Json& event) {
  const std::string line = event.dump() + "\n";
  const int fd = ::open(path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd < 0) throw Error("cannot open " + path_.string() + ": " + std::strerror(errno));
  std::size_t done = 0;
  while (done < line.size()) {
    const ssize_t w = ::write(fd, line.data() + done, line.size() - done);
    if (w < 0) {
      if (errno == EINTR) continue;
      const int err = errno;
      ::close(fd);
      throw Error("write to " + path_.string() + " failed: " + std::strerror(err));
    }
    done += static_cast<std::size_t>(w);
  }
  const bool synced = ::fsync(fd) == 0;
  ::close(fd);
  if (!synced) throw Error("fsync of " + path_.string() + " failed");
}

void StudyState::apply(const Json& event) {
  const auto seq = event.at("seq").get<std::uint64_t>();
  if (seq != next_seq) throw Error("event log out of sequence at " + std::to_string(seq));
  const auto type = event.at("type").get<std::string>();
  if (type == "selection") {
    auto r = event.at("record").get<SelectionRecord>();
    RecordKey key{r.participant_id, r.patient_id, r.phase};
    records[key] = std::move(r);
    ++revisions[key];
  } else if (type == "phase_started") {
    if (phase_from_string(event.at("phase").get<std::string>()) != Phase::assisted) {
      throw Error("only the assisted phase is started explicitly");
    }
    assisted_started.insert(event.at("participant_id").get<std::string>());
  } else {
    throw Error("unknown event type " + type);
  }
  ++next_seq;
}

StudyState StudyState::fold(const std::vector<Json>& events) {
  StudyState s;
  for (const auto& e : events) s.apply(e);
  return s;
}

StudyService::StudyService(StudyDefinition definition, std::filesystem::path data_dir)
    : def_(std::move(definition)),
      data_(std::move(data_dir)),
      cache_(data_ / "artifacts"),
      log_(data_ / "events.jsonl") {
  def_.validate();
  state_ = StudyState::fold(log_.load());
}

const Enrollment* StudyService::participant_for_token(const std::string& token) const {
  for (const auto& e : def_.participants) {
    if (e.token == token) return &e;
  }
  return nullptr;
}

bool StudyService::is_admin_token(const std::string& token) const { return token == def_.admin_token; }

std::filesystem::path StudyService::image_path(const std::string& patient_id) const {
  return data_ / "images" / (patient_id + ".png");
}

void StudyService::require_patient(const std::string& patient_id) const {
  if (!def_.has_patient(patient_id)) throw not_found("unknown patient " + patient_id);
}

void StudyService::require_participant(const std::string& participant_id) const {
  if (!def_.find_participant(participant_id)) throw not_found("unknown participant " + participant_id);
}

Json StudyService::patients(const std::string& participant_id) const {
  require_participant(participant_id);
  std::lock_guard lock(state_mutex_);
  const bool assisted = state_.assisted_started.count(participant_id) > 0;
  Json list = Json::array();
  for (std::size_t i = 0; i < def_.patient_ids.size(); ++i) {
    const auto& p = def_.patient_ids[i];
    list.push_back(Json{{"patient_id", p},
                        {"position", i + 1},
                        {"image_url", "/study/" + def_.study_id + "/image/" + p},
                        {"unassisted_submitted", state_.records.count({participant_id, p, Phase::unassisted}) > 0},
                        {"assisted_submitted", state_.records.count({participant_id, p, Phase::assisted}) > 0}});
  }
  return Json{{"study_id", def_.study_id},
              {"participant_id", participant_id},
              {"current_phase", to_string(assisted ? Phase::assisted : Phase::unassisted)},
              {"selection_cap", def_.selection_cap},
              {"patients", list}};
}

PipelineCache::Outcome StudyService::scored(const std::string& patient_id) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_bytes(image_path(patient_id));
  } catch (const std::exception& e) {
    throw not_found(std::string("image of patient ") + patient_id + " is missing");
  }
  auto o = cache_.run(bytes, patient_id, def_.pipeline);
  if (!o.ok()) {
    throw ServiceError(500, "pipeline failed in stage " + o.status.value("failed_stage", std::string("?")) + ": " +
                                o.status.value("error", std::string()));
  }
  return o;
}

PipelineCache::Outcome StudyService::run_pipeline(const std::string& patient_id) {
  require_patient(patient_id);
  const auto bytes = read_bytes(image_path(patient_id));
  return cache_.run(bytes, patient_id, def_.pipeline);
}

Json StudyService::view(const std::string& participant_id, const std::string& patient_id, Phase phase) {
  require_participant(participant_id);
  require_patient(patient_id);
  const auto pos = std::find(def_.patient_ids.begin(), def_.patient_ids.end(), patient_id) - def_.patient_ids.begin();
  Json payload{{"study_id", def_.study_id},
               {"participant_id", participant_id},
               {"patient_id", patient_id},
               {"phase", to_string(phase)},
               {"position", pos + 1},
               {"n_patients", def_.patient_ids.size()},
               {"image_url", "/study/" + def_.study_id + "/image/" + patient_id},
               {"selection_cap", def_.selection_cap}};

  if (phase == Phase::unassisted) {
    std::lock_guard lock(state_mutex_);
    if (state_.assisted_started.count(participant_id)) throw protocol_error("the unassisted phase is closed");
    payload["submitted"] = state_.records.count({participant_id, patient_id, phase}) > 0;
    return payload;
  }

  {
    std::lock_guard lock(state_mutex_);
    for (const auto& p : def_.patient_ids) {
      if (!state_.records.count({participant_id, p, Phase::unassisted})) {
        throw protocol_error("the assisted phase opens after every unassisted selection is in; missing " + p);
      }
    }
  }
  // Score before locking phase 1, so a pipeline failure does not close it.
  const auto outcome = scored(patient_id);
  const int k = def_.k_for(patient_id);
  Json lesions = Json::array();
  std::map<std::string, const LesionBox*> boxes;
  for (const auto& l : outcome.lesions) boxes[l.lesion_id] = &l;
  int unscored = 0;
  for (const auto& s : outcome.scores) {
    if (!s.rank) {
      ++unscored;
      continue;
    }
    auto it = boxes.find(s.lesion_id);
    if (it == boxes.end()) throw ServiceError(500, "score for undetected lesion " + s.lesion_id);
    lesions.push_back(Json{{"lesion_id", s.lesion_id},
                           {"box", it->second->box},
                           {"score", s.score ? Json(*s.score) : Json(nullptr)},
                           {"rank", *s.rank},
                           {"color", *s.rank <= k ? "red" : "green"}});
  }
  payload["top_k"] = k;
  payload["lesions"] = lesions;
  payload["unscored_lesions"] = unscored;

  std::lock_guard lock(state_mutex_);
  if (!state_.assisted_started.count(participant_id)) {
    const Json event{{"seq", state_.next_seq},
                     {"type", "phase_started"},
                     {"participant_id", participant_id},
                     {"phase", to_string(Phase::assisted)}};
    log_.append(event);
    state_.apply(event);
  }
  payload["submitted"] = state_.records.count({participant_id, patient_id, phase}) > 0;
  return payload;
}

SelectionRecord StudyService::submit(const std::string& participant_id, const std::string& patient_id, Phase phase,
                                     const std::vector<BoundingBox>& drawn, int confidence) {
  require_participant(participant_id);
  require_patient(patient_id);
  if (static_cast<int>(drawn.size()) > def_.selection_cap) {
    throw rejected("at most " + std::to_string(def_.selection_cap) + " boxes per image");
  }
  if (confidence < 1 || confidence > 5) throw rejected("confidence must be in 1..5");
  for (const auto& b : drawn) {
    if (!b.valid()) throw bad_request("drawn box with non-positive extent");
  }
  const auto check_phase = [&] {
    const bool started = state_.assisted_started.count(participant_id) > 0;
    if (phase == Phase::unassisted && started) throw protocol_error("the unassisted phase is closed");
    if (phase == Phase::assisted && !started) throw protocol_error("the assisted phase has not started");
  };
  {
    std::lock_guard lock(state_mutex_);
    check_phase();
  }
  const auto outcome = scored(patient_id);
  auto record = make_selection(participant_id, patient_id, phase, snap_selections(drawn, outcome.lesions), confidence);

  std::lock_guard lock(state_mutex_);
  check_phase();
  const Json event{{"seq", state_.next_seq}, {"type", "selection"}, {"record", record}};
  log_.append(event);
  state_.apply(event);
  return record;
}

std::optional<SelectionRecord> StudyService::selection(const std::string& participant_id,
                                                       const std::string& patient_id, Phase phase) const {
  require_participant(participant_id);
  require_patient(patient_id);
  std::lock_guard lock(state_mutex_);
  auto it = state_.records.find({participant_id, patient_id, phase});
  if (it == state_.records.end()) return std::nullopt;
  return it->second;
}

std::vector<ParticipantSession> StudyService::sessions() const {
  std::lock_guard lock(state_mutex_);
  std::vector<ParticipantSession> out;
  for (const auto& e : def_.participants) {
    ParticipantSession s;
    s.profile = e.profile;
    for (const auto& p : def_.patient_ids) {
      for (auto phase : {Phase::unassisted, Phase::assisted}) {
        auto it = state_.records.find({e.profile.participant_id, p, phase});
        if (it != state_.records.end()) s.records.push_back(it->second);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

StudyState StudyService::state() const {
  std::lock_guard lock(state_mutex_);
  return state_;
}

ReportOptions StudyService::default_report_options() const {
  ReportOptions o;
  o.top_k = def_.top_k;
  o.k_overrides = def_.k_overrides;
  return o;
}

Json StudyService::report(const ReportOptions& options) {
  ScoreSet scores;
  for (const auto& p : def_.patient_ids) add_scores(scores, scored(p).scores);
  return study_report(sessions(), scores, options);
}

std::vector<std::uint8_t> StudyService::image_png(const std::string& patient_id) const {
  require_patient(patient_id);
  const auto path = image_path(patient_id);
  if (!std::filesystem::exists(path)) throw not_found("image of patient " + patient_id + " is missing");
  return read_bytes(path);
}

bool payload_has_score_data(const Json& payload) {
  static const std::set<std::string> keys{"score", "scores", "raw_distance", "rank", "is_top_k",
                                          "color", "lesions", "top_k", "embedder_tag"};
  if (payload.is_object()) {
    for (const auto& [k, v] : payload.items()) {
      if (keys.count(k) || payload_has_score_data(v)) return true;
    }
  } else if (payload.is_array()) {
    for (const auto& v : payload) {
      if (payload_has_score_data(v)) return true;
    }
  }
  return false;
}

}  // namespace udscreen::study
