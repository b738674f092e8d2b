#include "udscreen/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace udscreen {

namespace {

template <typename E>
E enum_from_string(const std::string& s, const std::vector<E>& all, const char* what) {
  for (E e : all) {
    if (to_string(e) == s) return e;
  }
  throw Error(std::string("unknown ") + what + " '" + s + "'");
}

std::map<std::string, const UDScore*> index_scores(const std::vector<UDScore>& scores) {
  std::map<std::string, const UDScore*> by_id;
  for (const auto& s : scores) by_id[s.lesion_id] = &s;
  return by_id;
}

SensitivityReport make_report(int tp, int fn, const char* empty_reason) {
  SensitivityReport r;
  r.tp = tp;
  r.fn = fn;
  if (tp + fn > 0) {
    r.sensitivity = static_cast<double>(tp) / static_cast<double>(tp + fn);
  } else {
    r.reason = empty_reason;
  }
  return r;
}

}  // namespace

std::string to_string(ParticipantGroup g) {
  switch (g) {
    case ParticipantGroup::derm_le5y: return "derm_le5y";
    case ParticipantGroup::derm_le10y: return "derm_le10y";
    case ParticipantGroup::derm_gt10y: return "derm_gt10y";
    case ParticipantGroup::gp: return "gp";
    case ParticipantGroup::student: return "student";
  }
  throw Error("invalid participant group");
}

const std::vector<ParticipantGroup>& all_participant_groups() {
  static const std::vector<ParticipantGroup> all{ParticipantGroup::derm_le5y, ParticipantGroup::derm_le10y,
                                                 ParticipantGroup::derm_gt10y, ParticipantGroup::gp,
                                                 ParticipantGroup::student};
  return all;
}

ParticipantGroup participant_group_from_string(const std::string& s) {
  return enum_from_string(s, all_participant_groups(), "participant group");
}

std::string to_string(Phase p) { return p == Phase::unassisted ? "unassisted" : "assisted"; }

Phase phase_from_string(const std::string& s) {
  return enum_from_string(s, std::vector<Phase>{Phase::unassisted, Phase::assisted}, "phase");
}

std::string to_string(TruthKind k) {
  switch (k) {
    case TruthKind::participant_self: return "participant_self";
    case TruthKind::expert_majority: return "expert_majority";
    case TruthKind::ai_top_u: return "ai_top_u";
  }
  throw Error("invalid truth kind");
}

SnapResult snap_selections(const std::vector<BoundingBox>& drawn, const std::vector<LesionBox>& detected,
                           double iou_min) {
  struct Pair {
    double iou;
    std::size_t d, l;
  };
  std::vector<Pair> pairs;
  for (std::size_t d = 0; d < drawn.size(); ++d) {
    if (!drawn[d].valid()) continue;
    for (std::size_t l = 0; l < detected.size(); ++l) {
      const double v = iou(drawn[d], detected[l].box);
      if (v >= iou_min && v > 0.0) pairs.push_back({v, d, l});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.d != b.d) return a.d < b.d;
    return a.l < b.l;
  });
  std::vector<std::optional<std::size_t>> assigned(drawn.size());
  std::vector<bool> taken(detected.size(), false);
  std::vector<double> match_iou(drawn.size(), 0.0);
  for (const auto& p : pairs) {
    if (assigned[p.d] || taken[p.l]) continue;
    assigned[p.d] = p.l;
    taken[p.l] = true;
    match_iou[p.d] = p.iou;
  }
  SnapResult r;
  for (std::size_t d = 0; d < drawn.size(); ++d) {
    if (assigned[d]) {
      r.matches.push_back({d, detected[*assigned[d]].lesion_id, drawn[d], match_iou[d]});
    } else {
      r.unmatched.push_back(drawn[d]);
    }
  }
  return r;
}

void SelectionRecord::validate() const {
  if (participant_id.empty() || patient_id.empty()) throw Error("selection record needs participant and patient ids");
  if (confidence < 1 || confidence > 5) throw Error("confidence must be in 1..5");
  std::set<std::string> seen;
  for (const auto& id : selected) {
    if (!seen.insert(id).second) throw Error("lesion " + id + " selected twice");
  }
}

SelectionRecord make_selection(std::string participant_id, std::string patient_id, Phase phase,
                               const SnapResult& snap, int confidence) {
  SelectionRecord r;
  r.participant_id = std::move(participant_id);
  r.patient_id = std::move(patient_id);
  r.phase = phase;
  r.confidence = confidence;
  r.matches = snap.matches;
  r.unmatched_boxes = snap.unmatched;
  for (const auto& m : snap.matches) r.selected.push_back(m.lesion_id);
  r.validate();
  return r;
}

void to_json(Json& j, const ParticipantProfile& p) {
  j = Json{{"participant_id", p.participant_id}, {"group", to_string(p.group)}, {"is_expert", p.is_expert()}};
}

void from_json(const Json& j, ParticipantProfile& p) {
  p.participant_id = j.at("participant_id").get<std::string>();
  p.group = participant_group_from_string(j.at("group").get<std::string>());
  if (auto it = j.find("is_expert"); it != j.end() && it->get<bool>() != p.is_expert()) {
    throw Error("is_expert of " + p.participant_id + " contradicts group " + to_string(p.group));
  }
}

void to_json(Json& j, const SnapMatch& m) {
  j = Json{{"drawn_index", m.drawn_index}, {"lesion_id", m.lesion_id}, {"drawn", m.drawn}, {"iou", m.iou}};
}

void from_json(const Json& j, SnapMatch& m) {
  m.drawn_index = j.at("drawn_index").get<std::size_t>();
  m.lesion_id = j.at("lesion_id").get<std::string>();
  m.drawn = j.at("drawn").get<BoundingBox>();
  m.iou = j.at("iou").get<double>();
}

void to_json(Json& j, const SelectionRecord& r) {
  j = Json{{"participant_id", r.participant_id},
           {"patient_id", r.patient_id},
           {"phase", to_string(r.phase)},
           {"selected", r.selected},
           {"confidence", r.confidence},
           {"unmatched_boxes", r.unmatched_boxes},
           {"matches", r.matches}};
}

void from_json(const Json& j, SelectionRecord& r) {
  r.participant_id = j.at("participant_id").get<std::string>();
  r.patient_id = j.at("patient_id").get<std::string>();
  r.phase = phase_from_string(j.at("phase").get<std::string>());
  r.selected = j.at("selected").get<std::vector<std::string>>();
  r.confidence = j.at("confidence").get<int>();
  r.unmatched_boxes = j.value("unmatched_boxes", std::vector<BoundingBox>{});
  r.matches = j.value("matches", std::vector<SnapMatch>{});
  r.validate();
}

SelectionRecord exclude_for_eval(const SelectionRecord& selection, const std::vector<UDScore>& scores,
                                 int rank_cutoff) {
  const auto by_id = index_scores(scores);
  const auto keep = [&](const std::string& id) {
    auto it = by_id.find(id);
    if (it == by_id.end()) return false;
    const UDScore& s = *it->second;
    return !s.illumination_flag && s.rank && *s.rank <= rank_cutoff;
  };
  SelectionRecord out = selection;
  out.selected.clear();
  out.matches.clear();
  for (const auto& id : selection.selected) {
    if (keep(id)) out.selected.push_back(id);
  }
  for (const auto& m : selection.matches) {
    if (keep(m.lesion_id)) out.matches.push_back(m);
  }
  return out;
}

void to_json(Json& j, const SensitivityReport& r) {
  j = Json{{"tp", r.tp},
           {"fn", r.fn},
           {"sensitivity", r.sensitivity ? Json(*r.sensitivity) : Json(nullptr)},
           {"participant_id", r.participant_id},
           {"patient_id", r.patient_id},
           {"phase", r.phase ? Json(to_string(*r.phase)) : Json(nullptr)},
           {"truth", to_string(r.truth)}};
  if (!r.sensitivity) j["reason"] = r.reason;
}

SensitivityReport top_u_sensitivity(const SelectionRecord& selection, const std::vector<UDScore>& scores, int u) {
  if (u < 1) throw Error("u must be >= 1");
  const auto by_id = index_scores(scores);
  int tp = 0, fn = 0;
  for (const auto& id : selection.selected) {
    auto it = by_id.find(id);
    const bool hit = it != by_id.end() && it->second->rank && *it->second->rank <= u;
    (hit ? tp : fn)++;
  }
  fn += static_cast<int>(selection.unmatched_boxes.size());
  auto r = make_report(tp, fn, "empty_selection");
  r.participant_id = selection.participant_id;
  r.patient_id = selection.patient_id;
  r.phase = selection.phase;
  r.truth = TruthKind::participant_self;
  return r;
}

std::set<std::string> expert_majority(const std::vector<SelectionRecord>& selections,
                                      const std::vector<std::string>& experts, Phase phase) {
  const std::set<std::string> expert_set(experts.begin(), experts.end());
  std::set<std::string> voted;
  std::map<std::string, int> votes;
  std::optional<std::string> patient;
  for (const auto& s : selections) {
    if (s.phase != phase || !expert_set.count(s.participant_id)) continue;
    if (patient && *patient != s.patient_id) throw Error("expert majority over records of different patients");
    patient = s.patient_id;
    if (!voted.insert(s.participant_id).second) {
      throw Error("expert " + s.participant_id + " has two records for one patient and phase");
    }
    for (const auto& id : std::set<std::string>(s.selected.begin(), s.selected.end())) ++votes[id];
  }
  if (voted.size() < 2) throw Error("expert majority needs at least two expert records");
  std::set<std::string> majority;
  for (const auto& [id, n] : votes) {
    if (n >= 2) majority.insert(id);
  }
  return majority;
}

SensitivityReport participant_vs_majority(const SelectionRecord& selection, const std::set<std::string>& majority) {
  const std::set<std::string> picked(selection.selected.begin(), selection.selected.end());
  int tp = 0, fn = 0;
  for (const auto& id : majority) (picked.count(id) ? tp : fn)++;
  auto r = make_report(tp, fn, "empty_majority");
  r.participant_id = selection.participant_id;
  r.patient_id = selection.patient_id;
  r.phase = selection.phase;
  r.truth = TruthKind::expert_majority;
  return r;
}

void to_json(Json& j, const ParticipantSession& s) { j = Json{{"profile", s.profile}, {"records", s.records}}; }

void from_json(const Json& j, ParticipantSession& s) {
  s.profile = j.at("profile").get<ParticipantProfile>();
  s.records = j.value("records", std::vector<SelectionRecord>{});
  for (const auto& r : s.records) {
    if (r.participant_id != s.profile.participant_id) {
      throw Error("record of " + r.participant_id + " in the session of " + s.profile.participant_id);
    }
  }
}

std::vector<ParticipantSession> read_sessions(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ParticipantSession> out;
  for (const auto& f : files) {
    try {
      out.push_back(read_json_file(f).get<ParticipantSession>());
    } catch (const std::exception& e) {
      throw Error(f.string() + ": " + e.what());
    }
  }
  return out;
}

void write_session(const std::filesystem::path& path, const ParticipantSession& session) {
  write_json_file(path, session);
}

void add_scores(ScoreSet& set, const std::vector<UDScore>& scores) {
  if (scores.empty()) return;
  const std::string patient = patient_of_lesion(scores.front().lesion_id);
  const auto tag_of = [](const UDScore& s) { return s.embedder_tag ? to_string(*s.embedder_tag) : "untagged"; };
  const std::string tag = tag_of(scores.front());
  for (const auto& s : scores) {
    if (patient_of_lesion(s.lesion_id) != patient) throw Error("score list mixes patients");
    if (tag_of(s) != tag) throw Error("score list mixes embedder tags");
  }
  auto& slot = set[patient][tag];
  if (!slot.empty()) throw Error("duplicate " + tag + " scores for patient " + patient);
  slot = scores;
}

ScoreSet read_score_dir(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  ScoreSet set;
  for (const auto& f : files) add_scores(set, read_scores(f));
  return set;
}

Summary summarize(std::vector<double> values) {
  values.erase(std::remove_if(values.begin(), values.end(), [](double v) { return !std::isfinite(v); }),
               values.end());
  Summary s;
  s.n = values.size();
  if (values.empty()) return s;
  // Sorting first makes the sum independent of input order.
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  const auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
  };
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  s.iqr = *s.q3 - *s.q1;
  return s;
}

void to_json(Json& j, const Summary& s) {
  const auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  j = Json{{"n", s.n},         {"mean", opt(s.mean)}, {"q1", opt(s.q1)},
           {"median", opt(s.median)}, {"q3", opt(s.q3)}, {"iqr", opt(s.iqr)}};
}

int ReportOptions::k_for(const std::string& patient) const {
  auto it = k_overrides.find(patient);
  return it == k_overrides.end() ? top_k : it->second;
}

namespace {

struct Detail {
  std::string participant_id;
  std::string group;
  std::string patient_id;
  std::optional<Phase> phase;
  int drawn_count = 0;
  std::optional<int> confidence;
  SelectionRecord eval;  // after exclusion
  bool has_scores = false;
  SensitivityReport top_k;
  SensitivityReport vs_majority;
  std::vector<std::optional<double>> top_u;  // index u-1
};

SensitivityReport null_report(const SelectionRecord& r, TruthKind truth, const char* reason) {
  SensitivityReport s;
  s.participant_id = r.participant_id;
  s.patient_id = r.patient_id;
  s.phase = r.phase;
  s.truth = truth;
  s.reason = reason;
  return s;
}

Json opt_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json summary_row(const std::string& group, const std::optional<Phase>& phase, const Summary& s) {
  Json row = s;
  row["group"] = group;
  row["phase"] = phase ? Json(to_string(*phase)) : Json(nullptr);
  return row;
}

Json table(std::vector<std::string> columns, Json rows) {
  return Json{{"columns", std::move(columns)}, {"rows", std::move(rows)}};
}

const std::vector<std::string> kSummaryColumns{"group", "phase", "n", "mean", "q1", "median", "q3", "iqr"};

}  // namespace

Json study_report(const std::vector<ParticipantSession>& sessions, const ScoreSet& scores,
                  const ReportOptions& options) {
  if (options.max_u < 1) throw Error("max_u must be >= 1");
  std::vector<std::string> warnings;

  // Which embedder drives the main metrics.
  std::set<std::string> tags;
  for (const auto& [patient, by_tag] : scores) {
    for (const auto& [tag, list] : by_tag) tags.insert(tag);
  }
  std::string primary;
  if (options.embedder) {
    primary = *options.embedder;
  } else if (tags.size() == 1) {
    primary = *tags.begin();
  } else if (tags.count("selfdistill")) {
    primary = "selfdistill";
  } else if (!tags.empty()) {
    primary = *tags.begin();
  }
  if (tags.size() > 1) warnings.push_back("several embedder tags present; main metrics use " + primary);
  const auto scores_of = [&](const std::string& patient) -> const std::vector<UDScore>* {
    auto it = scores.find(patient);
    if (it == scores.end()) return nullptr;
    auto jt = it->second.find(primary);
    return jt == it->second.end() ? nullptr : &jt->second;
  };

  std::map<std::string, ParticipantProfile> profiles;
  std::vector<const SelectionRecord*> records;
  std::set<std::tuple<std::string, std::string, Phase>> seen;
  for (const auto& s : sessions) {
    if (s.profile.participant_id == kAiParticipant) throw Error("participant id 'ai' is reserved");
    if (!profiles.emplace(s.profile.participant_id, s.profile).second) {
      throw Error("duplicate participant " + s.profile.participant_id);
    }
    for (const auto& r : s.records) {
      r.validate();
      if (!seen.emplace(r.participant_id, r.patient_id, r.phase).second) {
        throw Error("duplicate record for " + r.participant_id + " / " + r.patient_id + " / " + to_string(r.phase));
      }
      records.push_back(&r);
    }
  }
  std::sort(records.begin(), records.end(), [](const SelectionRecord* a, const SelectionRecord* b) {
    return std::tie(a->participant_id, a->patient_id, a->phase) < std::tie(b->participant_id, b->patient_id, b->phase);
  });

  std::set<std::string> patients;
  for (const auto* r : records) patients.insert(r->patient_id);
  if (options.include_ai) {
    for (const auto& [patient, by_tag] : scores) {
      if (by_tag.count(primary)) patients.insert(patient);
    }
  }

  const auto eval_selection = [&](const SelectionRecord& r) {
    const auto* s = scores_of(r.patient_id);
    return s ? exclude_for_eval(r, *s, options.rank_cutoff) : r;
  };

  // Expert majority per patient, from the configured phase.
  std::vector<std::string> experts;
  for (const auto& [id, p] : profiles) {
    if (p.is_expert()) experts.push_back(id);
  }
  std::map<std::string, std::set<std::string>> majority;
  for (const auto& patient : patients) {
    std::vector<SelectionRecord> expert_records;
    for (const auto* r : records) {
      if (r->patient_id == patient && r->phase == options.majority_phase && profiles.at(r->participant_id).is_expert()) {
        expert_records.push_back(eval_selection(*r));
      }
    }
    if (expert_records.size() < 2) {
      warnings.push_back("patient " + patient + ": fewer than two expert records, no majority");
      continue;
    }
    majority[patient] = expert_majority(expert_records, experts, options.majority_phase);
  }

  const auto fill_metrics = [&](Detail& d, const std::vector<UDScore>* s) {
    d.has_scores = s != nullptr;
    if (s) {
      d.top_k = top_u_sensitivity(d.eval, *s, options.k_for(d.patient_id));
      for (int u = 1; u <= options.max_u; ++u) d.top_u.push_back(top_u_sensitivity(d.eval, *s, u).sensitivity);
    } else {
      d.top_k = null_report(d.eval, TruthKind::participant_self, "no_scores");
      d.top_u.assign(static_cast<std::size_t>(options.max_u), std::nullopt);
    }
    auto m = majority.find(d.patient_id);
    d.vs_majority = m == majority.end() ? null_report(d.eval, TruthKind::expert_majority, "no_majority")
                                        : participant_vs_majority(d.eval, m->second);
  };

  std::vector<Detail> details;
  for (const auto* r : records) {
    Detail d;
    d.participant_id = r->participant_id;
    d.group = to_string(profiles.at(r->participant_id).group);
    d.patient_id = r->patient_id;
    d.phase = r->phase;
    d.drawn_count = static_cast<int>(r->selected.size() + r->unmatched_boxes.size());
    d.confidence = r->confidence;
    d.eval = eval_selection(*r);
    fill_metrics(d, scores_of(r->patient_id));
    details.push_back(std::move(d));
  }
  if (options.include_ai) {
    for (const auto& patient : patients) {
      const auto* s = scores_of(patient);
      if (!s) continue;
      SelectionRecord r;
      r.participant_id = kAiParticipant;
      r.patient_id = patient;
      r.selected = top_k_ids(*s, options.k_for(patient));
      Detail d;
      d.participant_id = kAiParticipant;
      d.group = kAiParticipant;
      d.patient_id = patient;
      d.drawn_count = static_cast<int>(r.selected.size());
      d.eval = exclude_for_eval(r, *s, options.rank_cutoff);
      fill_metrics(d, s);
      d.top_k.phase.reset();
      d.vs_majority.phase.reset();
      details.push_back(std::move(d));
    }
  }

  std::vector<std::string> groups;
  for (auto g : all_participant_groups()) groups.push_back(to_string(g));
  const std::vector<Phase> phases{Phase::unassisted, Phase::assisted};
  const auto in_cell = [](const Detail& d, const std::string& group, const std::optional<Phase>& phase) {
    return d.group == group && d.phase == phase;
  };
  const auto cells = [&](bool with_ai) {
    std::vector<std::pair<std::string, std::optional<Phase>>> out;
    for (const auto& g : groups) {
      for (auto p : phases) out.emplace_back(g, p);
    }
    if (with_ai && options.include_ai) out.emplace_back(kAiParticipant, std::nullopt);
    return out;
  };

  Json tables = Json::object();

  {
    Json rows = Json::array();
    for (const auto& [g, p] : cells(false)) {
      std::vector<double> v;
      for (const auto& d : details) {
        if (in_cell(d, g, p)) v.push_back(d.drawn_count);
      }
      rows.push_back(summary_row(g, p, summarize(v)));
    }
    tables["selected_counts"] = table(kSummaryColumns, rows);
  }

  {
    Json rows = Json::array();
    for (const auto& [g, p] : cells(true)) {
      std::vector<double> v;
      for (const auto& d : details) {
        if (in_cell(d, g, p) && d.top_k.sensitivity) v.push_back(*d.top_k.sensitivity);
      }
      rows.push_back(summary_row(g, p, summarize(v)));
    }
    tables["top_k_sensitivity"] = table(kSummaryColumns, rows);
  }

  // Per participant: mean over patients, then summarized over participants.
  Json participant_rows = Json::array();
  std::map<std::pair<std::string, std::optional<Phase>>, std::vector<double>> participant_means;
  {
    std::map<std::tuple<std::string, std::string, std::optional<Phase>>, std::pair<std::vector<double>, std::vector<double>>>
        per;
    for (const auto& d : details) {
      auto& slot = per[{d.participant_id, d.group, d.phase}];
      if (d.top_k.sensitivity) slot.first.push_back(*d.top_k.sensitivity);
      if (d.vs_majority.sensitivity) slot.second.push_back(*d.vs_majority.sensitivity);
    }
    for (const auto& [key, v] : per) {
      const auto& [pid, group, phase] = key;
      const Summary tk = summarize(v.first), vm = summarize(v.second);
      participant_rows.push_back(Json{{"participant_id", pid},
                                      {"group", group},
                                      {"phase", phase ? Json(to_string(*phase)) : Json(nullptr)},
                                      {"n_top_k", tk.n},
                                      {"mean_top_k_sensitivity", opt_json(tk.mean)},
                                      {"n_vs_majority", vm.n},
                                      {"mean_sensitivity_vs_majority", opt_json(vm.mean)}});
      if (vm.mean) participant_means[{group, phase}].push_back(*vm.mean);
    }
    tables["participant_means"] =
        table({"participant_id", "group", "phase", "n_top_k", "mean_top_k_sensitivity", "n_vs_majority",
               "mean_sensitivity_vs_majority"},
              participant_rows);
  }

  {
    Json rows = Json::array();
    for (const auto& [g, p] : cells(true)) {
      auto it = participant_means.find({g, p});
      rows.push_back(summary_row(g, p, summarize(it == participant_means.end() ? std::vector<double>{} : it->second)));
    }
    tables["sensitivity_vs_majority"] = table(kSummaryColumns, rows);
  }

  {
    Json rows = Json::array();
    for (const auto& [g, p] : cells(false)) {
      std::vector<double> v;
      for (const auto& d : details) {
        if (in_cell(d, g, p) && d.confidence) v.push_back(*d.confidence);
      }
      rows.push_back(summary_row(g, p, summarize(v)));
    }
    tables["confidence"] = table(kSummaryColumns, rows);
  }

  Json missing_pairs = Json::array();
  {
    std::map<std::pair<std::string, std::string>, std::map<Phase, int>> conf;
    std::map<std::string, std::string> group_of;
    for (const auto& d : details) {
      if (!d.phase || !d.confidence) continue;
      conf[{d.participant_id, d.patient_id}][*d.phase] = *d.confidence;
      group_of[d.participant_id] = d.group;
    }
    std::map<std::string, std::vector<double>> deltas;
    Json delta_rows = Json::array();
    for (const auto& [key, by_phase] : conf) {
      const auto& [pid, patient] = key;
      auto u = by_phase.find(Phase::unassisted), a = by_phase.find(Phase::assisted);
      if (u == by_phase.end() || a == by_phase.end()) {
        missing_pairs.push_back(Json{{"participant_id", pid},
                                     {"patient_id", patient},
                                     {"missing_phase", to_string(u == by_phase.end() ? Phase::unassisted : Phase::assisted)}});
        delta_rows.push_back(Json{{"participant_id", pid}, {"group", group_of[pid]}, {"patient_id", patient}, {"delta", nullptr}});
        continue;
      }
      const int delta = a->second - u->second;
      deltas[group_of[pid]].push_back(delta);
      delta_rows.push_back(Json{{"participant_id", pid}, {"group", group_of[pid]}, {"patient_id", patient}, {"delta", delta}});
    }
    Json rows = Json::array();
    for (const auto& g : groups) rows.push_back(summary_row(g, std::nullopt, summarize(deltas[g])));
    tables["confidence_delta"] = table(kSummaryColumns, rows);
    tables["confidence_delta_per_image"] = table({"participant_id", "group", "patient_id", "delta"}, delta_rows);
  }

  {
    Json rows = Json::array();
    for (const auto& [g, p] : cells(false)) {
      for (int u = 1; u <= options.max_u; ++u) {
        std::vector<double> v;
        for (const auto& d : details) {
          if (in_cell(d, g, p) && d.top_u[static_cast<std::size_t>(u - 1)]) v.push_back(*d.top_u[static_cast<std::size_t>(u - 1)]);
        }
        const Summary s = summarize(v);
        rows.push_back(Json{{"group", g}, {"phase", to_string(*p)}, {"u", u}, {"n", s.n}, {"mean", opt_json(s.mean)}});
      }
    }
    tables["top_u_curves"] = table({"group", "phase", "u", "n", "mean"}, rows);
  }

  if (tags.size() > 1) {
    Json rows = Json::array();
    for (const auto& tag : tags) {
      for (int u = 1; u <= options.max_u; ++u) {
        std::vector<double> v;
        for (const auto& [patient, maj] : majority) {
          auto it = scores.find(patient);
          if (it == scores.end()) continue;
          auto jt = it->second.find(tag);
          if (jt == it->second.end()) continue;
          SelectionRecord r;
          r.participant_id = kAiParticipant;
          r.patient_id = patient;
          r.selected = top_k_ids(jt->second, u);
          const auto rep = participant_vs_majority(r, maj);
          if (rep.sensitivity) v.push_back(*rep.sensitivity);
        }
        const Summary s = summarize(v);
        rows.push_back(Json{{"embedder", tag}, {"u", u}, {"n", s.n}, {"mean", opt_json(s.mean)}});
      }
    }
    tables["embedder_top_u_curves"] = table({"embedder", "u", "n", "mean"}, rows);
  }

  Json detail_json = Json::array();
  for (const auto& d : details) {
    Json tu = Json::array();
    for (const auto& v : d.top_u) tu.push_back(opt_json(v));
    Json tk = d.top_k, vm = d.vs_majority;
    if (d.participant_id == kAiParticipant) tk["truth"] = vm["truth"] = to_string(TruthKind::ai_top_u);
    detail_json.push_back(Json{{"participant_id", d.participant_id},
                               {"group", d.group},
                               {"patient_id", d.patient_id},
                               {"phase", d.phase ? Json(to_string(*d.phase)) : Json(nullptr)},
                               {"drawn_count", d.drawn_count},
                               {"confidence", d.confidence ? Json(*d.confidence) : Json(nullptr)},
                               {"eval_selected", d.eval.selected},
                               {"k", options.k_for(d.patient_id)},
                               {"top_k_sensitivity", tk},
                               {"vs_majority", vm},
                               {"top_u", tu}});
  }

  Json majority_json = Json::object();
  for (const auto& [patient, ids] : majority) majority_json[patient] = ids;

  Json overrides = Json::object();
  for (const auto& [p, k] : options.k_overrides) overrides[p] = k;

  return Json{{"options", {{"majority_phase", to_string(options.majority_phase)},
                           {"top_k", options.top_k},
                           {"k_overrides", overrides},
                           {"rank_cutoff", options.rank_cutoff},
                           {"max_u", options.max_u},
                           {"embedder", primary},
                           {"include_ai", options.include_ai}}},
              {"tables", tables},
              {"expert_majority", majority_json},
              {"missing_phase_pairs", missing_pairs},
              {"details", detail_json},
              {"warnings", warnings}};
}

namespace {

std::string csv_cell(const Json& v) {
  if (v.is_null()) return "";
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  }
  return v.dump();
}

}  // namespace

void write_report(const std::filesystem::path& dir, const Json& report) {
  std::filesystem::create_directories(dir);
  write_json_file(dir / "report.json", report);
  for (const auto& [name, t] : report.at("tables").items()) {
    std::ostringstream out;
    const auto columns = t.at("columns").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
    out << "\n";
    for (const auto& row : t.at("rows")) {
      for (std::size_t i = 0; i < columns.size(); ++i) {
        out << (i ? "," : "") << csv_cell(row.contains(columns[i]) ? row.at(columns[i]) : Json(nullptr));
      }
      out << "\n";
    }
    write_file_atomic(dir / (name + ".csv"), out.str());
  }
}

}  // namespace udscreen
