#include "support/fixtures.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <tuple>

#include <unistd.h>

#include "udscreen/ud_scorer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace udscreen;

namespace testsupport {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() /
          ("udscreen-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

namespace {

double box_iou(const BoundingBox& a, const BoundingBox& b) {
  const long w = std::max(0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const long h = std::max(0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const long inter = w * h;
  const long area_a = static_cast<long>(a.x_max - a.x_min) * (a.y_max - a.y_min);
  const long area_b = static_cast<long>(b.x_max - b.x_min) * (b.y_max - b.y_min);
  const long uni = area_a + area_b - inter;
  return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace

std::vector<LesionBox> reference_nms(std::vector<LesionBox> boxes, double threshold, const std::string& patient_id) {
  const auto before = [](const LesionBox& a, const LesionBox& b) {
    if (a.confidence != b.confidence) return a.confidence > b.confidence;
    return std::make_tuple(a.box.x_min, a.box.y_min, a.box.x_max, a.box.y_max) <
           std::make_tuple(b.box.x_min, b.box.y_min, b.box.x_max, b.box.y_max);
  };
  const std::size_t n = boxes.size();
  // Priority of every box: how many boxes come strictly before it.
  std::vector<std::size_t> prio(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i && (before(boxes[j], boxes[i]) || (!before(boxes[i], boxes[j]) && j < i))) ++prio[i];
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[prio[i]] = i;
  std::vector<bool> kept(n, false);
  std::vector<LesionBox> out;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t i = order[r];
    bool keep = true;
    for (std::size_t s = 0; s < r; ++s) {
      const std::size_t j = order[s];
      if (kept[j] && box_iou(boxes[i].box, boxes[j].box) > threshold) keep = false;
    }
    kept[i] = keep;
    if (keep) {
      LesionBox b = boxes[i];
      b.lesion_id = patient_id + ":" + std::to_string(out.size());
      out.push_back(b);
    }
  }
  return out;
}

synth::SynthConfig small_dossier(std::uint64_t seed, int n_lesions, int n_outliers, int width, int height) {
  synth::SynthConfig c;
  c.seed = seed;
  c.patient_id = "s" + std::to_string(seed);
  c.n_lesions = n_lesions;
  c.n_outliers = n_outliers;
  c.width = width;
  c.height = height;
  return c;
}

namespace {

struct Persona {
  std::string id;
  ParticipantGroup group;
  double skill;
};

std::uint64_t mix(std::uint64_t seed, const std::string& a, const std::string& b, int c) {
  std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
  for (char ch : a + "|" + b) h = (h ^ static_cast<unsigned char>(ch)) * 0x100000001b3ULL;
  return h ^ (static_cast<std::uint64_t>(c) << 32);
}

std::vector<UDScore> scripted_scores(const std::string& patient, int n, std::mt19937_64& rng, EmbedderTag tag) {
  const int dim = 16;
  std::normal_distribution<double> noise(0.0, 0.15);
  std::vector<LesionEmbedding> emb;
  for (int i = 0; i < n; ++i) {
    LesionEmbedding e;
    e.lesion_id = make_lesion_id(patient, static_cast<std::size_t>(i));
    e.tag = tag;
    e.vector.assign(dim, 0.0);
    e.vector[0] = 1.0;
    // A handful of clear outliers, the rest a noisy cluster.
    if (i % 11 == 5) e.vector[1 + (i % 7)] = 1.5;
    for (auto& v : e.vector) v += noise(rng);
    l2_normalize(e.vector);
    emb.push_back(std::move(e));
  }
  std::set<std::string> flagged;
  std::uniform_int_distribution<int> pick(0, n - 1);
  const int n_flag = 1 + static_cast<int>(rng() % 2);
  while (static_cast<int>(flagged.size()) < n_flag) flagged.insert(make_lesion_id(patient, static_cast<std::size_t>(pick(rng))));
  return score_lesions(emb, kDefaultTopK, flagged).scores;
}

}  // namespace

StudyFixture make_study_fixture(const fs::path& dir, std::uint64_t seed, bool two_embedders) {
  StudyFixture f;
  f.sessions_dir = dir / "sessions";
  f.scores_dir = dir / "scores";
  fs::create_directories(f.sessions_dir);
  fs::create_directories(f.scores_dir);
  f.k_overrides = {{"pt3", 9}};

  const std::vector<std::string> patients{"pt1", "pt2", "pt3", "pt4", "pt5"};
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < patients.size(); ++t) {
    const auto& p = patients[t];
    const int n = 30 + 8 * static_cast<int>(t);
    auto& boxes = f.detections[p];
    for (int i = 0; i < n; ++i) {
      LesionBox b;
      b.lesion_id = make_lesion_id(p, static_cast<std::size_t>(i));
      const int x = 50 + (i % 8) * 120, y = 50 + (i / 8) * 120;
      b.box = {x, y, x + 36 + (i % 3) * 4, y + 36 + (i % 5) * 2};
      b.confidence = 0.9;
      boxes.push_back(b);
    }
    auto primary = scripted_scores(p, n, rng, EmbedderTag::selfdistill);
    write_scores(f.scores_dir / (p + ".selfdistill.jsonl"), primary);
    add_scores(f.scores, primary);
    if (two_embedders) {
      auto other = scripted_scores(p, n, rng, EmbedderTag::handcrafted);
      write_scores(f.scores_dir / (p + ".handcrafted.jsonl"), other);
      add_scores(f.scores, other);
    }
  }

  const std::vector<Persona> personas{{"exp_a", ParticipantGroup::derm_gt10y, 0.75},
                                      {"exp_b", ParticipantGroup::derm_gt10y, 0.65},
                                      {"exp_c", ParticipantGroup::derm_gt10y, 0.7},
                                      {"resident", ParticipantGroup::derm_le5y, 0.5},
                                      {"student", ParticipantGroup::student, 0.3}};
  for (const auto& persona : personas) {
    ParticipantSession session;
    session.profile = {persona.id, persona.group};
    for (const auto& p : patients) {
      const auto& scores = f.scores.at(p).at("selfdistill");
      std::map<std::string, const UDScore*> by_id;
      for (const auto& s : scores) by_id[s.lesion_id] = &s;
      int unassisted_conf = 3;
      for (auto phase : {Phase::unassisted, Phase::assisted}) {
        if (persona.id == "student" && p == "pt5" && phase == Phase::assisted) continue;
        if (persona.id == "resident" && p == "pt4" && phase == Phase::unassisted) continue;
        std::mt19937_64 r(mix(seed, persona.id, p, static_cast<int>(phase)));
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::vector<BoundingBox> drawn;
        const bool empty = persona.id == "student" && p == "pt2" && phase == Phase::unassisted;
        if (!empty) {
          for (const auto& b : f.detections.at(p)) {
            const UDScore* s = by_id.at(b.lesion_id);
            double prob = 0.04;
            if (s->rank && *s->rank <= 15) prob = persona.skill;
            if (phase == Phase::assisted && s->rank && *s->rank <= (f.k_overrides.count(p) ? 9 : 10)) prob += 0.2;
            if (u01(r) < prob) {
              const int dx = static_cast<int>(r() % 7) - 3, dy = static_cast<int>(r() % 7) - 3;
              drawn.push_back(b.box.translated(dx, dy));
            }
          }
          // Boxes on empty skin, which match nothing.
          const int stray = static_cast<int>(r() % 3);
          for (int k = 0; k < stray; ++k) {
            const int x = 3000 + static_cast<int>(r() % 500);
            drawn.push_back({x, 100, x + 40, 140});
          }
          std::shuffle(drawn.begin(), drawn.end(), r);
          if (drawn.size() > 20) drawn.resize(20);
        }
        int conf = 1 + static_cast<int>(r() % 5);
        if (phase == Phase::assisted) conf = std::min(5, unassisted_conf + static_cast<int>(r() % 2));
        unassisted_conf = conf;
        const auto snap = snap_selections(drawn, f.detections.at(p));
        session.records.push_back(make_selection(persona.id, p, phase, snap, conf));
      }
    }
    write_session(f.sessions_dir / (persona.id + ".json"), session);
    f.sessions.push_back(std::move(session));
  }
  return f;
}

// ---------------------------------------------------------------------------
// Oracle: works on raw JSON only.

namespace {

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::vector<json> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(json::parse(line));
  }
  return out;
}

json stats(std::vector<double> v) {
  json row{{"n", v.size()}};
  if (v.empty()) {
    for (const char* k : {"mean", "q1", "median", "q3", "iqr"}) row[k] = nullptr;
    return row;
  }
  std::sort(v.begin(), v.end());
  double total = 0.0;
  for (double x : v) total += x;
  const auto q = [&](double p) {
    const double h = (static_cast<double>(v.size()) - 1.0) * p;
    const std::size_t lo = static_cast<std::size_t>(h);
    if (lo + 1 >= v.size()) return v[lo];
    return v[lo] + (h - static_cast<double>(lo)) * (v[lo + 1] - v[lo]);
  };
  row["mean"] = total / static_cast<double>(v.size());
  row["q1"] = q(0.25);
  row["median"] = q(0.5);
  row["q3"] = q(0.75);
  row["iqr"] = q(0.75) - q(0.25);
  return row;
}

json mean_or_null(const std::vector<double>& v) {
  const json s = stats(v);
  return s["mean"];
}

struct Rec {
  std::string pid, group, patient;
  json phase;  // string or null
  int drawn = 0;
  json confidence;
  std::vector<std::string> selected;
  int unmatched = 0;
};

int phase_index(const json& p) { return p.is_null() ? -1 : (p == "unassisted" ? 0 : 1); }

}  // namespace

json oracle_report(const fs::path& sessions_dir, const fs::path& scores_dir, const std::string& majority_phase,
                   int top_k, const std::map<std::string, int>& k_overrides, int rank_cutoff, int max_u,
                   bool include_ai) {
  // Scores: patient -> tag -> lesion -> (rank or -1 if unranked, flagged).
  struct Entry {
    int rank;
    bool flagged;
  };
  std::map<std::string, std::map<std::string, std::map<std::string, Entry>>> scores;
  std::set<std::string> tags;
  for (const auto& e : fs::directory_iterator(scores_dir)) {
    if (e.path().extension() != ".jsonl") continue;
    for (const auto& r : read_lines(e.path())) {
      const std::string id = r["lesion_id"];
      const std::string patient = id.substr(0, id.rfind(':'));
      const std::string tag = r.contains("embedder_tag") ? r["embedder_tag"].get<std::string>() : "untagged";
      tags.insert(tag);
      scores[patient][tag][id] = {r["rank"].is_null() ? -1 : r["rank"].get<int>(), r.value("illumination_flag", false)};
    }
  }
  std::string primary = tags.size() == 1 ? *tags.begin() : (tags.count("selfdistill") ? "selfdistill" : *tags.begin());
  const auto k_for = [&](const std::string& p) { return k_overrides.count(p) ? k_overrides.at(p) : top_k; };
  const auto ranked = [&](const std::string& p) -> const std::map<std::string, Entry>* {
    if (!scores.count(p) || !scores[p].count(primary)) return nullptr;
    return &scores[p][primary];
  };

  std::vector<Rec> recs;
  std::map<std::string, std::string> group_of;
  for (const auto& e : fs::directory_iterator(sessions_dir)) {
    if (e.path().extension() != ".json") continue;
    const json s = read_json(e.path());
    const std::string pid = s["profile"]["participant_id"];
    group_of[pid] = s["profile"]["group"];
    for (const auto& r : s["records"]) {
      Rec x;
      x.pid = pid;
      x.group = group_of[pid];
      x.patient = r["patient_id"];
      x.phase = r["phase"];
      x.selected = r["selected"].get<std::vector<std::string>>();
      x.unmatched = static_cast<int>(r["unmatched_boxes"].size());
      x.drawn = static_cast<int>(x.selected.size()) + x.unmatched;
      x.confidence = r["confidence"];
      recs.push_back(x);
    }
  }
  std::sort(recs.begin(), recs.end(), [](const Rec& a, const Rec& b) {
    return std::make_tuple(a.pid, a.patient, phase_index(a.phase)) < std::make_tuple(b.pid, b.patient, phase_index(b.phase));
  });

  const auto excluded = [&](const std::string& patient, const std::vector<std::string>& sel) {
    const auto* r = ranked(patient);
    if (!r) return sel;
    std::vector<std::string> out;
    for (const auto& id : sel) {
      auto it = r->find(id);
      if (it != r->end() && !it->second.flagged && it->second.rank >= 1 && it->second.rank <= rank_cutoff) out.push_back(id);
    }
    return out;
  };

  std::set<std::string> patients;
  for (const auto& r : recs) patients.insert(r.patient);
  if (include_ai) {
    for (const auto& [p, by_tag] : scores) {
      if (by_tag.count(primary)) patients.insert(p);
    }
  }

  std::map<std::string, std::set<std::string>> majority;
  for (const auto& p : patients) {
    std::map<std::string, int> votes;
    int n_records = 0;
    for (const auto& r : recs) {
      if (r.patient != p || r.phase != majority_phase || group_of[r.pid] != "derm_gt10y") continue;
      ++n_records;
      const auto sel = excluded(p, r.selected);
      for (const auto& id : std::set<std::string>(sel.begin(), sel.end())) votes[id] += 1;
    }
    if (n_records < 2) continue;
    auto& m = majority[p];
    for (const auto& [id, n] : votes) {
      if (n >= 2) m.insert(id);
    }
  }

  struct Det {
    Rec rec;
    std::vector<std::string> eval;
    json topk_sens, vm_sens;
    int topk_tp = 0, topk_fn = 0, vm_tp = 0, vm_fn = 0;
    std::vector<json> top_u;
  };
  const auto metrics = [&](Det& d) {
    const auto* r = ranked(d.rec.patient);
    const auto count_in_top = [&](int u, int& tp, int& fn) {
      tp = fn = 0;
      for (const auto& id : d.eval) {
        auto it = r->find(id);
        if (it != r->end() && it->second.rank >= 1 && it->second.rank <= u) ++tp; else ++fn;
      }
      fn += d.rec.unmatched;
    };
    if (r) {
      count_in_top(k_for(d.rec.patient), d.topk_tp, d.topk_fn);
      d.topk_sens = d.topk_tp + d.topk_fn ? json(double(d.topk_tp) / double(d.topk_tp + d.topk_fn)) : json(nullptr);
      for (int u = 1; u <= max_u; ++u) {
        int tp, fn;
        count_in_top(u, tp, fn);
        d.top_u.push_back(tp + fn ? json(double(tp) / double(tp + fn)) : json(nullptr));
      }
    } else {
      d.topk_sens = nullptr;
      d.top_u.assign(static_cast<std::size_t>(max_u), nullptr);
    }
    d.vm_sens = nullptr;
    if (majority.count(d.rec.patient)) {
      const auto& m = majority[d.rec.patient];
      const std::set<std::string> picked(d.eval.begin(), d.eval.end());
      for (const auto& id : m) (picked.count(id) ? d.vm_tp : d.vm_fn) += 1;
      if (!m.empty()) d.vm_sens = double(d.vm_tp) / double(d.vm_tp + d.vm_fn);
    }
  };

  std::vector<Det> dets;
  for (const auto& r : recs) {
    Det d;
    d.rec = r;
    d.eval = excluded(r.patient, r.selected);
    metrics(d);
    dets.push_back(d);
  }
  if (include_ai) {
    for (const auto& p : patients) {
      const auto* r = ranked(p);
      if (!r) continue;
      std::vector<std::pair<int, std::string>> top;
      for (const auto& [id, e] : *r) {
        if (e.rank >= 1 && e.rank <= k_for(p)) top.emplace_back(e.rank, id);
      }
      std::sort(top.begin(), top.end());
      Det d;
      d.rec.pid = "ai";
      d.rec.group = "ai";
      d.rec.patient = p;
      d.rec.phase = nullptr;
      d.rec.confidence = nullptr;
      for (const auto& [rank, id] : top) d.rec.selected.push_back(id);
      d.rec.drawn = static_cast<int>(d.rec.selected.size());
      d.eval = excluded(p, d.rec.selected);
      metrics(d);
      dets.push_back(d);
    }
  }

  const std::vector<std::string> groups{"derm_le5y", "derm_le10y", "derm_gt10y", "gp", "student"};
  std::vector<std::pair<std::string, json>> cells, cells_ai;
  for (const auto& g : groups) {
    for (const char* ph : {"unassisted", "assisted"}) cells.emplace_back(g, ph);
  }
  cells_ai = cells;
  if (include_ai) cells_ai.emplace_back("ai", nullptr);
  const std::vector<std::string> summary_cols{"group", "phase", "n", "mean", "q1", "median", "q3", "iqr"};
  const auto row = [](const std::string& g, const json& ph, json s) {
    s["group"] = g;
    s["phase"] = ph;
    return s;
  };

  json tables;
  {
    json rows = json::array();
    for (const auto& [g, ph] : cells) {
      std::vector<double> v;
      for (const auto& d : dets) {
        if (d.rec.group == g && d.rec.phase == ph) v.push_back(d.rec.drawn);
      }
      rows.push_back(row(g, ph, stats(v)));
    }
    tables["selected_counts"] = {{"columns", summary_cols}, {"rows", rows}};
  }
  {
    json rows = json::array();
    for (const auto& [g, ph] : cells_ai) {
      std::vector<double> v;
      for (const auto& d : dets) {
        if (d.rec.group == g && d.rec.phase == ph && !d.topk_sens.is_null()) v.push_back(d.topk_sens.get<double>());
      }
      rows.push_back(row(g, ph, stats(v)));
    }
    tables["top_k_sensitivity"] = {{"columns", summary_cols}, {"rows", rows}};
  }
  {
    // participant means, keyed (pid, group, phase) with null phase first.
    std::map<std::tuple<std::string, std::string, int>, std::pair<std::vector<double>, std::vector<double>>> per;
    for (const auto& d : dets) {
      auto& s = per[{d.rec.pid, d.rec.group, phase_index(d.rec.phase)}];
      if (!d.topk_sens.is_null()) s.first.push_back(d.topk_sens.get<double>());
      if (!d.vm_sens.is_null()) s.second.push_back(d.vm_sens.get<double>());
    }
    json rows = json::array();
    std::map<std::pair<std::string, int>, std::vector<double>> means;
    for (const auto& [key, v] : per) {
      const auto& [pid, g, ph] = key;
      const json phase = ph < 0 ? json(nullptr) : json(ph == 0 ? "unassisted" : "assisted");
      rows.push_back({{"participant_id", pid},
                      {"group", g},
                      {"phase", phase},
                      {"n_top_k", v.first.size()},
                      {"mean_top_k_sensitivity", mean_or_null(v.first)},
                      {"n_vs_majority", v.second.size()},
                      {"mean_sensitivity_vs_majority", mean_or_null(v.second)}});
      if (!v.second.empty()) means[{g, ph}].push_back(mean_or_null(v.second).get<double>());
    }
    tables["participant_means"] = {{"columns",
                                    {"participant_id", "group", "phase", "n_top_k", "mean_top_k_sensitivity",
                                     "n_vs_majority", "mean_sensitivity_vs_majority"}},
                                   {"rows", rows}};
    json srows = json::array();
    for (const auto& [g, ph] : cells_ai) srows.push_back(row(g, ph, stats(means[{g, phase_index(ph)}])));
    tables["sensitivity_vs_majority"] = {{"columns", summary_cols}, {"rows", srows}};
  }
  {
    json rows = json::array();
    for (const auto& [g, ph] : cells) {
      std::vector<double> v;
      for (const auto& d : dets) {
        if (d.rec.group == g && d.rec.phase == ph && !d.rec.confidence.is_null()) v.push_back(d.rec.confidence.get<int>());
      }
      rows.push_back(row(g, ph, stats(v)));
    }
    tables["confidence"] = {{"columns", summary_cols}, {"rows", rows}};
  }
  {
    std::map<std::pair<std::string, std::string>, std::map<int, int>> conf;
    for (const auto& d : dets) {
      if (d.rec.phase.is_null()) continue;
      conf[{d.rec.pid, d.rec.patient}][phase_index(d.rec.phase)] = d.rec.confidence.get<int>();
    }
    std::map<std::string, std::vector<double>> deltas;
    json per_image = json::array();
    for (const auto& [key, c] : conf) {
      const std::string g = group_of[key.first];
      json delta = nullptr;
      if (c.count(0) && c.count(1)) {
        delta = c.at(1) - c.at(0);
        deltas[g].push_back(c.at(1) - c.at(0));
      }
      per_image.push_back({{"participant_id", key.first}, {"group", g}, {"patient_id", key.second}, {"delta", delta}});
    }
    json rows = json::array();
    for (const auto& g : groups) rows.push_back(row(g, nullptr, stats(deltas[g])));
    tables["confidence_delta"] = {{"columns", summary_cols}, {"rows", rows}};
    tables["confidence_delta_per_image"] = {{"columns", {"participant_id", "group", "patient_id", "delta"}},
                                            {"rows", per_image}};
  }
  {
    json rows = json::array();
    for (const auto& [g, ph] : cells) {
      for (int u = 1; u <= max_u; ++u) {
        std::vector<double> v;
        for (const auto& d : dets) {
          if (d.rec.group == g && d.rec.phase == ph && !d.top_u[u - 1].is_null()) v.push_back(d.top_u[u - 1].get<double>());
        }
        rows.push_back({{"group", g}, {"phase", ph}, {"u", u}, {"n", v.size()}, {"mean", mean_or_null(v)}});
      }
    }
    tables["top_u_curves"] = {{"columns", {"group", "phase", "u", "n", "mean"}}, {"rows", rows}};
  }
  if (tags.size() > 1) {
    json rows = json::array();
    for (const auto& tag : tags) {
      for (int u = 1; u <= max_u; ++u) {
        std::vector<double> v;
        for (const auto& [p, m] : majority) {
          if (!scores.count(p) || !scores[p].count(tag) || m.empty()) continue;
          int tp = 0;
          for (const auto& id : m) {
            auto it = scores[p][tag].find(id);
            if (it != scores[p][tag].end() && it->second.rank >= 1 && it->second.rank <= u) ++tp;
          }
          v.push_back(double(tp) / double(m.size()));
        }
        rows.push_back({{"embedder", tag}, {"u", u}, {"n", v.size()}, {"mean", mean_or_null(v)}});
      }
    }
    tables["embedder_top_u_curves"] = {{"columns", {"embedder", "u", "n", "mean"}}, {"rows", rows}};
  }

  json maj = json::object();
  for (const auto& [p, m] : majority) maj[p] = std::vector<std::string>(m.begin(), m.end());
  json details = json::array();
  for (const auto& d : dets) {
    json tu = json::array();
    for (const auto& x : d.top_u) tu.push_back(x);
    details.push_back({{"participant_id", d.rec.pid},
                       {"patient_id", d.rec.patient},
                       {"phase", d.rec.phase},
                       {"drawn_count", d.rec.drawn},
                       {"eval_selected", d.eval},
                       {"top_k_sensitivity", {{"tp", d.topk_tp}, {"fn", d.topk_fn}, {"sensitivity", d.topk_sens}}},
                       {"vs_majority", {{"tp", d.vm_tp}, {"fn", d.vm_fn}, {"sensitivity", d.vm_sens}}},
                       {"top_u", tu}});
  }
  return {{"tables", tables}, {"expert_majority", maj}, {"details", details}};
}

}  // namespace testsupport
