#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "support/fixtures.hpp"
#include "udscreen/evaluation.hpp"

using namespace udscreen;

namespace {

LesionBox det(const std::string& id, BoundingBox b) {
  LesionBox l;
  l.lesion_id = id;
  l.box = b;
  return l;
}

// Scores for lesions "p:0".."p:n-1" ranked in index order; listed ids are flagged.
std::vector<UDScore> ranked_scores(int n, const std::set<int>& flagged = {}) {
  std::vector<UDScore> out;
  int rank = 0;
  for (int i = 0; i < n; ++i) {
    UDScore s;
    s.lesion_id = make_lesion_id("p", static_cast<std::size_t>(i));
    if (flagged.count(i)) {
      s.illumination_flag = true;
    } else {
      s.rank = ++rank;
      s.score = 1.0 - rank / static_cast<double>(n);
      s.is_top_k = rank <= 10;
    }
    out.push_back(s);
  }
  return out;
}

SelectionRecord pick(const std::string& who, std::vector<std::string> ids, Phase phase = Phase::unassisted,
                     int unmatched = 0) {
  SelectionRecord r;
  r.participant_id = who;
  r.patient_id = "p";
  r.phase = phase;
  r.selected = std::move(ids);
  r.confidence = 3;
  for (int i = 0; i < unmatched; ++i) r.unmatched_boxes.push_back({i * 10, 0, i * 10 + 5, 5});
  return r;
}

std::vector<std::string> ids(std::initializer_list<int> idx) {
  std::vector<std::string> out;
  for (int i : idx) out.push_back(make_lesion_id("p", static_cast<std::size_t>(i)));
  return out;
}

}  // namespace

TEST(Snap, SpecExamples) {
  const std::vector<LesionBox> d{det("p:0", {0, 0, 10, 10}), det("p:1", {100, 100, 120, 120})};
  auto r = snap_selections({{0, 0, 10, 10}}, d);
  ASSERT_EQ(r.matches.size(), 1u);
  EXPECT_EQ(r.matches[0].lesion_id, "p:0");
  EXPECT_DOUBLE_EQ(r.matches[0].iou, 1.0);

  r = snap_selections({{50, 50, 60, 60}}, d);
  EXPECT_TRUE(r.matches.empty());
  EXPECT_EQ(r.unmatched.size(), 1u);

  // Two drawn boxes over one lesion: the tighter box wins.
  r = snap_selections({{0, 0, 14, 14}, {0, 0, 11, 10}}, d);
  ASSERT_EQ(r.matches.size(), 1u);
  EXPECT_EQ(r.matches[0].drawn_index, 1u);
  ASSERT_EQ(r.unmatched.size(), 1u);
  EXPECT_EQ(r.unmatched[0], (BoundingBox{0, 0, 14, 14}));

  EXPECT_TRUE(snap_selections({}, d).matches.empty());
  EXPECT_EQ(snap_selections({{0, 0, 10, 10}}, {}).unmatched.size(), 1u);
}

TEST(Snap, ThresholdAndTies) {
  const std::vector<LesionBox> d{det("p:0", {0, 0, 10, 10})};
  // IoU 0.25 is below the 0.30 minimum.
  EXPECT_TRUE(snap_selections({BoundingBox{0, 0, 11, 10}}, d).unmatched.empty());
  EXPECT_EQ(snap_selections({{0, 0, 20, 20}}, d).unmatched.size(), 1u);
  // Equal IoU: the earlier drawn box keeps the lesion.
  const auto r = snap_selections({{5, 0, 15, 10}, {-5, 0, 5, 10}}, {det("p:0", {0, 0, 10, 10})}, 0.3);
  ASSERT_EQ(r.matches.size(), 1u);
  EXPECT_EQ(r.matches[0].drawn_index, 0u);
}

TEST(Snap, OneToOneProperty) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> pos(0, 100), side(5, 25), jit(-4, 4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<LesionBox> d;
    for (int i = 0; i < 12; ++i) {
      const int x = pos(rng), y = pos(rng);
      d.push_back(det(make_lesion_id("p", static_cast<std::size_t>(i)), {x, y, x + side(rng), y + side(rng)}));
    }
    std::vector<BoundingBox> drawn;
    for (int i = 0; i < 10; ++i) drawn.push_back(d[rng() % d.size()].box.translated(jit(rng), jit(rng)));
    const auto r = snap_selections(drawn, d);
    EXPECT_EQ(r.matches.size() + r.unmatched.size(), drawn.size());
    std::set<std::string> used;
    std::size_t prev = 0;
    for (std::size_t i = 0; i < r.matches.size(); ++i) {
      EXPECT_TRUE(used.insert(r.matches[i].lesion_id).second);
      EXPECT_GE(r.matches[i].iou, kDefaultSnapIou);
      if (i) EXPECT_GT(r.matches[i].drawn_index, prev);
      prev = r.matches[i].drawn_index;
    }
  }
}

TEST(SelectionRecord, ValidateAndJson) {
  auto r = pick("a", ids({1, 2}), Phase::assisted, 1);
  r.matches.push_back({0, "p:1", {1, 2, 3, 4}, 0.5});
  EXPECT_NO_THROW(r.validate());
  EXPECT_EQ(Json(r).get<SelectionRecord>(), r);
  r.confidence = 0;
  EXPECT_THROW(r.validate(), Error);
  r.confidence = 6;
  EXPECT_THROW(r.validate(), Error);
  r = pick("a", ids({1, 1}));
  EXPECT_THROW(r.validate(), Error);
  EXPECT_THROW(phase_from_string("later"), Error);
  EXPECT_THROW(participant_group_from_string("nurse"), Error);
}

TEST(Exclude, SpecExamples) {
  const auto scores = ranked_scores(30, {5});
  auto r = pick("a", ids({0, 1, 2}));
  EXPECT_EQ(exclude_for_eval(r, scores).selected, r.selected);
  // The flagged p:5 takes no rank, so p:26 sits at rank 26, past the cutoff.
  r = pick("a", ids({0, 26, 1}));
  EXPECT_EQ(exclude_for_eval(r, scores).selected, ids({0, 1}));
  r = pick("a", ids({5, 2}));
  EXPECT_EQ(exclude_for_eval(r, scores).selected, ids({2}));
  // Unknown ids are dropped; unmatched boxes stay.
  r = pick("a", {"p:99", "p:3"}, Phase::unassisted, 2);
  const auto e = exclude_for_eval(r, scores);
  EXPECT_EQ(e.selected, ids({3}));
  EXPECT_EQ(e.unmatched_boxes.size(), 2u);
}

TEST(TopU, SpecExamples) {
  const auto scores = ranked_scores(40);
  auto rep = top_u_sensitivity(pick("a", top_k_ids(scores, 10)), scores, 10);
  EXPECT_EQ(*rep.sensitivity, 1.0);
  rep = top_u_sensitivity(pick("a", ids({0, 1, 2, 3, 4, 5, 6, 7, 15, 30})), scores, 10);
  EXPECT_EQ(rep.tp, 8);
  EXPECT_EQ(rep.fn, 2);
  EXPECT_DOUBLE_EQ(*rep.sensitivity, 0.8);
  rep = top_u_sensitivity(pick("a", {}), scores, 10);
  EXPECT_FALSE(rep.sensitivity);
  EXPECT_EQ(rep.reason, "empty_selection");
  EXPECT_EQ(Json(rep)["sensitivity"], nullptr);
  EXPECT_THROW(top_u_sensitivity(pick("a", {}), scores, 0), Error);
}

TEST(TopU, SweepMatchesSetRecountAndIsMonotone) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 20 + static_cast<int>(rng() % 40);
    const auto scores = ranked_scores(n);
    std::vector<int> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    std::vector<std::string> sel;
    for (int i = 0; i < static_cast<int>(rng() % 15); ++i) sel.push_back(make_lesion_id("p", static_cast<std::size_t>(all[static_cast<std::size_t>(i)])));
    const int unmatched = static_cast<int>(rng() % 3);
    const auto r = pick("a", sel, Phase::unassisted, unmatched);
    double prev = -1;
    for (int u = 1; u <= 50; ++u) {
      const auto rep = top_u_sensitivity(r, scores, u);
      const auto top = top_k_ids(scores, u);
      const std::set<std::string> top_set(top.begin(), top.end());
      int tp = 0;
      for (const auto& id : sel) tp += top_set.count(id) ? 1 : 0;
      const int fn = static_cast<int>(sel.size()) - tp + unmatched;
      EXPECT_EQ(rep.tp, tp);
      EXPECT_EQ(rep.fn, fn);
      if (tp + fn == 0) {
        EXPECT_FALSE(rep.sensitivity);
        continue;
      }
      EXPECT_GE(*rep.sensitivity, prev);
      prev = *rep.sensitivity;
      if (u >= n) {
        EXPECT_DOUBLE_EQ(*rep.sensitivity, static_cast<double>(sel.size()) / static_cast<double>(sel.size() + unmatched));
      }
    }
  }
}

TEST(Majority, SpecExamples) {
  const std::vector<std::string> experts{"e1", "e2", "e3"};
  const auto m = expert_majority({pick("e1", ids({1, 2, 3})), pick("e2", ids({1, 2})), pick("e3", ids({1, 4}))}, experts);
  EXPECT_EQ(m, (std::set<std::string>{"p:1", "p:2"}));
  EXPECT_THROW(expert_majority({pick("e1", ids({1}))}, experts), Error);
  // Non-experts and other phases do not vote.
  EXPECT_THROW(expert_majority({pick("e1", ids({1})), pick("x", ids({1})), pick("e2", ids({1}), Phase::assisted)}, experts),
               Error);
  EXPECT_EQ(expert_majority({pick("e1", ids({1})), pick("e2", ids({1}), Phase::assisted), pick("e3", ids({1}), Phase::assisted)},
                            experts, Phase::assisted),
            (std::set<std::string>{"p:1"}));
  EXPECT_THROW(expert_majority({pick("e1", ids({1})), pick("e1", ids({2}))}, experts), Error);
}

TEST(Majority, BruteForceAndOrderInvariance) {
  std::mt19937_64 rng(6);
  const std::vector<std::string> experts{"e1", "e2", "e3", "e4"};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<SelectionRecord> recs;
    std::vector<std::vector<bool>> matrix;
    for (const auto& e : experts) {
      std::vector<bool> row(15);
      std::vector<std::string> sel;
      for (int i = 0; i < 15; ++i) {
        row[static_cast<std::size_t>(i)] = rng() % 3 == 0;
        if (row[static_cast<std::size_t>(i)]) sel.push_back(make_lesion_id("p", static_cast<std::size_t>(i)));
      }
      std::shuffle(sel.begin(), sel.end(), rng);
      recs.push_back(pick(e, sel));
      matrix.push_back(row);
    }
    std::set<std::string> want;
    for (int i = 0; i < 15; ++i) {
      int n = 0;
      for (const auto& row : matrix) n += row[static_cast<std::size_t>(i)];
      if (n >= 2) want.insert(make_lesion_id("p", static_cast<std::size_t>(i)));
    }
    EXPECT_EQ(expert_majority(recs, experts), want);
    std::shuffle(recs.begin(), recs.end(), rng);
    auto shuffled_experts = experts;
    std::shuffle(shuffled_experts.begin(), shuffled_experts.end(), rng);
    EXPECT_EQ(expert_majority(recs, shuffled_experts), want);
  }
}

TEST(VsMajority, SpecExamples) {
  const std::set<std::string> maj{"p:1", "p:2", "p:3"};
  auto rep = participant_vs_majority(pick("a", ids({1, 2, 3, 7})), maj);
  EXPECT_EQ(*rep.sensitivity, 1.0);
  rep = participant_vs_majority(pick("a", ids({8, 9})), maj);
  EXPECT_EQ(*rep.sensitivity, 0.0);
  rep = participant_vs_majority(pick("a", ids({1, 2, 9})), maj);
  EXPECT_EQ(rep.tp, 2);
  EXPECT_EQ(rep.fn, 1);
  EXPECT_DOUBLE_EQ(*rep.sensitivity, 2.0 / 3.0);
  rep = participant_vs_majority(pick("a", ids({1})), {});
  EXPECT_FALSE(rep.sensitivity);
  EXPECT_EQ(rep.reason, "empty_majority");
  EXPECT_EQ(rep.truth, TruthKind::expert_majority);
}

TEST(Summarize, TypeSevenQuantiles) {
  const auto s = summarize({4, 1, 3, 2});
  EXPECT_EQ(s.n, 4u);
  EXPECT_DOUBLE_EQ(*s.mean, 2.5);
  EXPECT_DOUBLE_EQ(*s.q1, 1.75);
  EXPECT_DOUBLE_EQ(*s.median, 2.5);
  EXPECT_DOUBLE_EQ(*s.q3, 3.25);
  EXPECT_DOUBLE_EQ(*s.iqr, 1.5);
  const auto one = summarize({7, std::nan("")});
  EXPECT_EQ(one.n, 1u);
  EXPECT_EQ(*one.iqr, 0.0);
  const auto none = summarize({});
  EXPECT_EQ(none.n, 0u);
  EXPECT_FALSE(none.mean);
}

TEST(Sessions, DirectoryRoundTrip) {
  testsupport::TempDir dir("sessions");
  const auto f = testsupport::make_study_fixture(dir.path(), 3, false);
  const auto back = read_sessions(f.sessions_dir);
  ASSERT_EQ(back.size(), f.sessions.size());
  std::map<std::string, const ParticipantSession*> by_id;
  for (const auto& s : f.sessions) by_id[s.profile.participant_id] = &s;
  for (const auto& s : back) {
    EXPECT_EQ(s.profile, by_id.at(s.profile.participant_id)->profile);
    EXPECT_EQ(s.records, by_id.at(s.profile.participant_id)->records);
  }
  const auto scores = read_score_dir(f.scores_dir);
  EXPECT_EQ(scores.size(), 5u);
  EXPECT_EQ(scores.at("pt2").at("selfdistill").size(), f.scores.at("pt2").at("selfdistill").size());
}

namespace {

ReportOptions fixture_options(const testsupport::StudyFixture& f) {
  ReportOptions o;
  o.k_overrides = f.k_overrides;
  return o;
}

void expect_matches_oracle(const Json& report, const Json& oracle) {
  for (const auto& [name, table] : oracle["tables"].items()) {
    ASSERT_TRUE(report["tables"].contains(name)) << name;
    EXPECT_EQ(report["tables"][name]["columns"], table["columns"]) << name;
    ASSERT_EQ(report["tables"][name]["rows"].size(), table["rows"].size()) << name;
    for (std::size_t i = 0; i < table["rows"].size(); ++i) {
      EXPECT_EQ(report["tables"][name]["rows"][i], table["rows"][i]) << name << " row " << i;
    }
  }
  EXPECT_EQ(report["tables"].size(), oracle["tables"].size());
  EXPECT_EQ(report["expert_majority"], oracle["expert_majority"]);
  ASSERT_GT(oracle["details"].size(), 40u);
  ASSERT_EQ(report["details"].size(), oracle["details"].size());
  for (std::size_t i = 0; i < oracle["details"].size(); ++i) {
    const auto& want = oracle["details"][i];
    const auto& got = report["details"][i];
    for (const char* k : {"participant_id", "patient_id", "phase", "drawn_count", "eval_selected", "top_u"}) {
      EXPECT_EQ(got[k], want[k]) << "detail " << i << " " << k;
    }
    for (const char* k : {"tp", "fn", "sensitivity"}) {
      EXPECT_EQ(got["top_k_sensitivity"][k], want["top_k_sensitivity"][k]) << "detail " << i;
      EXPECT_EQ(got["vs_majority"][k], want["vs_majority"][k]) << "detail " << i;
    }
  }
}

}  // namespace

TEST(StudyReport, MatchesIndependentRecomputation) {
  for (bool two : {false, true}) {
    testsupport::TempDir dir("report");
    const auto f = testsupport::make_study_fixture(dir.path(), 17, two);
    const auto sessions = read_sessions(f.sessions_dir);
    const auto scores = read_score_dir(f.scores_dir);
    for (Phase mp : {Phase::unassisted, Phase::assisted}) {
      auto o = fixture_options(f);
      o.majority_phase = mp;
      const auto report = study_report(sessions, scores, o);
      const auto oracle = testsupport::oracle_report(f.sessions_dir, f.scores_dir, to_string(mp), o.top_k, o.k_overrides,
                                                     o.rank_cutoff, o.max_u, true);
      expect_matches_oracle(report, oracle);
      EXPECT_EQ(report["tables"].contains("embedder_top_u_curves"), two);
    }
  }
}

TEST(StudyReport, FixtureCoversEdgeCases) {
  testsupport::TempDir dir("edges");
  const auto f = testsupport::make_study_fixture(dir.path(), 17, false);
  const auto report = study_report(f.sessions, f.scores, fixture_options(f));
  // Missing phase pairs are listed and give null deltas.
  EXPECT_EQ(report["missing_phase_pairs"].size(), 2u);
  int null_deltas = 0;
  for (const auto& row : report["tables"]["confidence_delta_per_image"]["rows"]) null_deltas += row["delta"].is_null();
  EXPECT_EQ(null_deltas, 2);
  // The empty selection yields a null top-k sensitivity.
  bool saw_empty = false;
  for (const auto& d : report["details"]) {
    if (d["participant_id"] == "student" && d["patient_id"] == "pt2" && d["phase"] == "unassisted") {
      saw_empty = true;
      EXPECT_TRUE(d["top_k_sensitivity"]["sensitivity"].is_null());
      EXPECT_EQ(d["top_k_sensitivity"]["reason"], "empty_selection");
    }
    if (d["patient_id"] == "pt3") EXPECT_EQ(d["k"], 9);
  }
  EXPECT_TRUE(saw_empty);
}

TEST(StudyReport, AiSelfSensitivityIsOneWithZeroIqr) {
  testsupport::TempDir dir("ai");
  const auto f = testsupport::make_study_fixture(dir.path(), 23, false);
  const auto report = study_report(f.sessions, f.scores, fixture_options(f));
  bool found = false;
  for (const auto& row : report["tables"]["top_k_sensitivity"]["rows"]) {
    if (row["group"] != "ai") continue;
    found = true;
    EXPECT_EQ(row["n"], 5);
    EXPECT_EQ(row["mean"], 1.0);
    EXPECT_EQ(row["iqr"], 0.0);
    EXPECT_TRUE(row["phase"].is_null());
  }
  EXPECT_TRUE(found);
}

TEST(StudyReport, TopUCurvesAreMonotone) {
  testsupport::TempDir dir("mono");
  const auto f = testsupport::make_study_fixture(dir.path(), 29, false);
  const auto report = study_report(f.sessions, f.scores, fixture_options(f));
  for (const auto& d : report["details"]) {
    double prev = -1;
    for (const auto& v : d["top_u"]) {
      if (v.is_null()) continue;
      EXPECT_GE(v.get<double>(), prev);
      prev = v.get<double>();
    }
  }
}

TEST(StudyReport, IdenticalPhasesGiveZeroConfidenceDeltas) {
  ParticipantSession s;
  s.profile = {"solo", ParticipantGroup::gp};
  for (const auto* patient : {"a", "b"}) {
    for (Phase ph : {Phase::unassisted, Phase::assisted}) {
      SelectionRecord r;
      r.participant_id = "solo";
      r.patient_id = patient;
      r.phase = ph;
      r.confidence = 4;
      r.selected = {std::string(patient) + ":1"};
      s.records.push_back(r);
    }
  }
  const auto report = study_report({s}, {});
  for (const auto& row : report["tables"]["confidence_delta_per_image"]["rows"]) EXPECT_EQ(row["delta"], 0);
  for (const auto& d : report["details"]) {
    EXPECT_EQ(d["top_k_sensitivity"]["reason"], "no_scores");
    EXPECT_EQ(d["vs_majority"]["reason"], "no_majority");
  }
  EXPECT_FALSE(report["warnings"].empty());
}

TEST(StudyReport, RejectsBadInput) {
  ParticipantSession s;
  s.profile = {"ai", ParticipantGroup::gp};
  EXPECT_THROW(study_report({s}, {}), Error);
  s.profile = {"x", ParticipantGroup::gp};
  SelectionRecord r;
  r.participant_id = "x";
  r.patient_id = "a";
  r.confidence = 2;
  s.records = {r, r};
  EXPECT_THROW(study_report({s}, {}), Error);
  ReportOptions o;
  o.max_u = 0;
  EXPECT_THROW(study_report({}, {}, o), Error);
}

TEST(StudyReport, WritesJsonAndCsv) {
  testsupport::TempDir dir("write");
  const auto f = testsupport::make_study_fixture(dir.path(), 31, true);
  const auto report = study_report(f.sessions, f.scores, fixture_options(f));
  write_report(dir / "out", report);
  EXPECT_EQ(read_json_file(dir / "out/report.json"), report);
  for (const auto& [name, t] : report["tables"].items()) {
    std::ifstream in(dir / ("out/" + name + ".csv"));
    ASSERT_TRUE(in) << name;
    std::string header;
    std::getline(in, header);
    std::string want;
    for (const auto& c : t["columns"]) want += (want.empty() ? "" : ",") + c.get<std::string>();
    EXPECT_EQ(header, want);
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line);) ++lines;
    EXPECT_EQ(lines, t["rows"].size());
  }
}
