#include <csignal>
#include <iostream>

#include <CLI11.hpp>

#include "udscreen/evaluation.hpp"
#include "udscreen/image_io.hpp"
#include "udscreen/pipeline.hpp"
#include "udscreen/server.hpp"
#include "udscreen/synthgen.hpp"

namespace fs = std::filesystem;
using namespace udscreen;

namespace {

PipelineConfig load_config(const std::string& path) {
  PipelineConfig c;
  if (!path.empty()) read_json_file(path).get_to(c);
  return c;
}

WideFieldImage load_image(const std::string& path, const std::string& patient) {
  auto img = synth::read_dossier(path);
  if (!patient.empty()) img.patient_id = patient;
  return img;
}

study::StudyServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Wide-field lesion screening: detection, ugly-duckling scoring and reader-study tools"};
  app.require_subcommand(1);

  // synthgen
  auto* syn = app.add_subcommand("synthgen", "Generate seeded synthetic dossiers (PNG + ground-truth JSON)");
  std::uint64_t syn_seed = 0;
  int syn_count = 1, syn_w = 4096, syn_h = 6144, syn_lesions = 0, syn_outliers = 3;
  std::string syn_out, syn_config;
  syn->add_option("--seed", syn_seed, "First seed; patient i uses seed+i");
  syn->add_option("--count", syn_count, "Number of patients")->check(CLI::PositiveNumber);
  syn->add_option("--width", syn_w)->check(CLI::PositiveNumber);
  syn->add_option("--height", syn_h)->check(CLI::PositiveNumber);
  syn->add_option("--lesions", syn_lesions, "Fixed lesion count (default: sampled per patient)");
  syn->add_option("--outliers", syn_outliers, "Planted outliers per patient");
  syn->add_option("--config", syn_config, "SynthConfig JSON; overrides sampling (seed and id still vary)");
  syn->add_option("--out", syn_out, "Output directory")->required();

  // detect
  auto* det = app.add_subcommand("detect", "Tiled detection, NMS and illumination flags");
  std::string det_image, det_out, det_config, det_patient, det_import, det_backend;
  std::optional<int> det_tile, det_overlap;
  std::optional<double> det_nms, det_conf;
  det->add_option("--image", det_image, "Wide-field PNG")->required()->check(CLI::ExistingFile);
  det->add_option("--out", det_out, "Detections JSONL")->required();
  det->add_option("--config", det_config, "Pipeline config JSON")->check(CLI::ExistingFile);
  det->add_option("--patient", det_patient, "Patient id (default: from the sidecar or file name)");
  det->add_option("--backend", det_backend, "blob, or imported together with --import");
  det->add_option("--tile", det_tile, "Tile size")->check(CLI::PositiveNumber);
  det->add_option("--overlap", det_overlap, "Tile overlap")->check(CLI::NonNegativeNumber);
  det->add_option("--nms-iou", det_nms, "NMS IoU threshold")->check(CLI::Range(0.0, 1.0));
  det->add_option("--min-confidence", det_conf, "Confidence threshold")->check(CLI::Range(0.0, 1.0));
  det->add_option("--import", det_import, "Per-tile detections of an external detector (JSONL)")
      ->check(CLI::ExistingFile);

  // crops
  auto* cr = app.add_subcommand("crops", "Write each detected lesion's pixel crop as <lesion_id>.png");
  std::string cr_image, cr_det, cr_out;
  cr->add_option("--image", cr_image, "Wide-field PNG")->required()->check(CLI::ExistingFile);
  cr->add_option("--detections", cr_det, "Detections JSONL")->required()->check(CLI::ExistingFile);
  cr->add_option("--out", cr_out, "Output directory")->required();

  // embed
  auto* emb = app.add_subcommand("embed", "Embed detected lesions");
  std::string emb_image, emb_det, emb_crops, emb_out, emb_config, emb_kind;
  std::optional<std::uint64_t> emb_seed;
  std::optional<int> emb_min_epochs, emb_max_epochs;
  auto* emb_image_opt = emb->add_option("--image", emb_image, "Wide-field PNG")->check(CLI::ExistingFile);
  auto* emb_crops_opt =
      emb->add_option("--crops", emb_crops, "Directory of crop PNGs named <lesion_id>.png")->check(CLI::ExistingDirectory);
  emb_image_opt->excludes(emb_crops_opt);
  emb->add_option("--detections", emb_det, "Detections JSONL (needed with --image; supplies flags with --crops)")
      ->check(CLI::ExistingFile);
  emb->add_option("--out", emb_out, "Embeddings JSONL")->required();
  emb->add_option("--config", emb_config, "Pipeline config JSON")->check(CLI::ExistingFile);
  emb->add_option("--mode,--embedder", emb_kind, "handcrafted or selfdistill (overrides the config)")
      ->check(CLI::IsMember({"handcrafted", "selfdistill"}));
  emb->add_option("--seed", emb_seed, "Training seed (overrides the config)");
  emb->add_option("--min-epochs", emb_min_epochs)->check(CLI::PositiveNumber);
  emb->add_option("--max-epochs", emb_max_epochs)->check(CLI::PositiveNumber);

  // score
  auto* sc = app.add_subcommand("score", "Median-cosine UD scores and ranks");
  std::string sc_emb, sc_det, sc_out;
  int sc_k = kDefaultTopK;
  sc->add_option("--embeddings", sc_emb, "Embeddings JSONL")->required()->check(CLI::ExistingFile);
  sc->add_option("--detections", sc_det, "Detections JSONL; flagged lesions are left unranked")
      ->check(CLI::ExistingFile);
  sc->add_option("--out", sc_out, "Scores JSONL")->required();
  sc->add_option("--k,--top-k", sc_k)->check(CLI::NonNegativeNumber);

  // run
  auto* run = app.add_subcommand("run", "Whole pipeline on one image");
  std::string run_image, run_out, run_config, run_patient;
  run->add_option("--image", run_image, "Wide-field PNG")->required()->check(CLI::ExistingFile);
  run->add_option("--out", run_out, "Output directory")->required();
  run->add_option("--config", run_config, "Pipeline config JSON")->check(CLI::ExistingFile);
  run->add_option("--patient", run_patient, "Patient id");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Reader-study report from session and score files");
  std::string ev_sessions, ev_scores, ev_out, ev_phase = "unassisted", ev_embedder;
  int ev_k = kDefaultTopK, ev_cutoff = kDefaultRankCutoff, ev_max_u = kDefaultMaxU;
  std::vector<std::string> ev_overrides;
  bool ev_no_ai = false;
  ev->add_option("--sessions", ev_sessions, "Directory of participant session JSON files")
      ->required()
      ->check(CLI::ExistingDirectory);
  ev->add_option("--scores", ev_scores, "Directory of per-patient score JSONL files")
      ->required()
      ->check(CLI::ExistingDirectory);
  ev->add_option("--out", ev_out, "Report directory")->required();
  ev->add_option("--majority-phase", ev_phase, "Phase whose expert selections form the majority")
      ->check(CLI::IsMember({"unassisted", "assisted"}));
  ev->add_option("--top-k", ev_k)->check(CLI::PositiveNumber);
  ev->add_option("--k-override", ev_overrides, "PATIENT=K, repeatable");
  ev->add_option("--rank-cutoff", ev_cutoff)->check(CLI::PositiveNumber);
  ev->add_option("--max-u", ev_max_u)->check(CLI::PositiveNumber);
  ev->add_option("--embedder", ev_embedder, "Embedder tag for the main metrics");
  ev->add_flag("--no-ai", ev_no_ai, "Leave out the AI pseudo-participant");

  // serve
  auto* sv = app.add_subcommand("serve", "Reader-study HTTP service");
  std::string sv_study, sv_data, sv_host = "127.0.0.1";
  int sv_port = 8080;
  sv->add_option("--study", sv_study, "Study definition JSON")->required()->check(CLI::ExistingFile);
  sv->add_option("--data", sv_data, "Data directory (images/, events.jsonl, artifacts/)")->required();
  sv->add_option("--port", sv_port)->check(CLI::Range(1, 65535));
  sv->add_option("--host", sv_host);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*syn) {
      fs::create_directories(syn_out);
      for (int i = 0; i < syn_count; ++i) {
        const auto seed = syn_seed + static_cast<std::uint64_t>(i);
        auto c = syn_config.empty() ? synth::sample_patient_config(seed, syn_w, syn_h)
                                    : read_json_file(syn_config).get<synth::SynthConfig>();
        c.seed = seed;
        c.patient_id = "synth" + std::to_string(seed);
        if (syn_config.empty()) {
          if (syn_lesions > 0) c.n_lesions = syn_lesions;
          c.n_outliers = syn_outliers;
        }
        const auto img = synth::generate_dossier(c);
        synth::write_dossier(syn_out, img, c);
        std::cout << c.patient_id << " " << c.n_lesions << " lesions\n";
      }
    } else if (*det) {
      auto cfg = load_config(det_config);
      if (!det_backend.empty()) cfg.backend = det_backend;
      if (!det_import.empty()) cfg.backend = "imported";
      if (det_tile) cfg.tile_size = *det_tile;
      if (det_overlap) cfg.overlap = *det_overlap;
      if (det_nms) cfg.nms_iou = *det_nms;
      if (det_conf) cfg.min_confidence = *det_conf;
      const auto img = load_image(det_image, det_patient);
      auto backend = detection::make_backend(cfg.backend, det_import);
      auto lesions = detect_lesions(img, cfg, *backend);
      quality::populate_frame_means(img, lesions, cfg.illumination.ring_width);
      auto flagged = quality::flag_poorly_illuminated(std::move(lesions), cfg.illumination);
      if (!flagged.warning.empty()) std::cerr << "warning: " << flagged.warning << "\n";
      const detection::DetectionsHeader header{img.patient_id, img.width(),  img.height(),      cfg.tile_size,
                                               cfg.overlap,    cfg.nms_iou, cfg.min_confidence, backend->name()};
      detection::write_detections(det_out, header, flagged.lesions);
      std::cout << flagged.lesions.size() << " lesions\n";
    } else if (*cr) {
      const auto dets = detection::read_detections(cr_det);
      const auto img = load_image(cr_image, dets.header.image_id);
      fs::create_directories(cr_out);
      for (const auto& c : detection::extract_crops(img, dets.lesions)) {
        write_png(fs::path(cr_out) / (c.lesion_id + ".png"), c.pixels);
      }
      std::cout << dets.lesions.size() << " crops\n";
    } else if (*emb) {
      auto cfg = load_config(emb_config);
      if (!emb_kind.empty()) cfg.embedder = embedder_tag_from_string(emb_kind);
      if (emb_seed) cfg.trainer.seed = *emb_seed;
      if (emb_min_epochs) cfg.trainer.min_epochs = *emb_min_epochs;
      if (emb_max_epochs) cfg.trainer.max_epochs = *emb_max_epochs;
      cfg.trainer.validate();
      std::set<std::string> flagged;
      std::optional<detection::DetectionsFile> dets;
      if (!emb_det.empty()) {
        dets = detection::read_detections(emb_det);
        for (const auto& l : dets->lesions) {
          if (l.illumination_flag) flagged.insert(l.lesion_id);
        }
      }
      std::vector<PreprocessedCrop> crops;
      if (!emb_crops.empty()) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(emb_crops)) {
          if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
          crops.push_back(prepare_crop(f.stem().string(), read_png(f), cfg.illumination.ring_width));
        }
      } else {
        if (emb_image.empty() || !dets) throw Error("embed needs --crops, or --image with --detections");
        const auto img = load_image(emb_image, dets->header.image_id);
        crops = prepare_crops(img, dets->lesions, cfg.illumination.ring_width);
      }
      if (crops.empty()) throw Error("no crops to embed");
      TrainHooks hooks;
      hooks.on_epoch = [](int e, double loss) {
        if (e % 10 == 0) std::cerr << "epoch " << e << " loss " << loss << "\n";
      };
      const auto r = cfg.embedder == EmbedderTag::handcrafted ? HandcraftedEmbedder{}.embed(crops, flagged)
                                                               : train_patient(crops, cfg.trainer, flagged, hooks);
      if (!r.warning.empty()) std::cerr << "warning: " << r.warning << "\n";
      write_embeddings(emb_out, r.embeddings);
      std::cout << r.embeddings.size() << " embeddings";
      if (r.epochs_run) std::cout << ", " << r.epochs_run << " epochs";
      std::cout << "\n";
    } else if (*sc) {
      const auto embeddings = read_embeddings(sc_emb);
      std::set<std::string> flagged;
      if (!sc_det.empty()) {
        for (const auto& l : detection::read_detections(sc_det).lesions) {
          if (l.illumination_flag) flagged.insert(l.lesion_id);
        }
      }
      const auto r = score_lesions(embeddings, sc_k, flagged);
      if (!r.warning.empty()) std::cerr << "warning: " << r.warning << "\n";
      write_scores(sc_out, r.scores);
      for (const auto& id : top_k_ids(r.scores, sc_k)) std::cout << id << "\n";
    } else if (*run) {
      const auto cfg = load_config(run_config);
      const auto img = load_image(run_image, run_patient);
      fs::create_directories(run_out);
      const auto r = run_pipeline(img, cfg, nullptr, [&](const std::string& stage, const PipelineResult& p) {
        std::cerr << "stage " << stage << " done\n";
        if (stage == "filter") detection::write_detections(fs::path(run_out) / "detections.jsonl", p.header, p.lesions);
        if (stage == "embed") write_embeddings(fs::path(run_out) / "embeddings.jsonl", p.embeddings);
        if (stage == "score") write_scores(fs::path(run_out) / "scores.jsonl", p.scores);
      });
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
      for (const auto& id : top_k_ids(r.scores, cfg.top_k)) std::cout << id << "\n";
    } else if (*ev) {
      ReportOptions o;
      o.majority_phase = phase_from_string(ev_phase);
      o.top_k = ev_k;
      o.rank_cutoff = ev_cutoff;
      o.max_u = ev_max_u;
      o.include_ai = !ev_no_ai;
      if (!ev_embedder.empty()) o.embedder = ev_embedder;
      for (const auto& kv : ev_overrides) {
        const auto eq = kv.rfind('=');
        if (eq == std::string::npos || eq == 0) throw Error("--k-override expects PATIENT=K, got " + kv);
        o.k_overrides[kv.substr(0, eq)] = std::stoi(kv.substr(eq + 1));
      }
      const auto report = study_report(read_sessions(ev_sessions), read_score_dir(ev_scores), o);
      write_report(ev_out, report);
      for (const auto& w : report.at("warnings")) std::cerr << "warning: " << w.get<std::string>() << "\n";
      std::cout << "report written to " << ev_out << "\n";
    } else if (*sv) {
      auto def = read_json_file(sv_study).get<study::StudyDefinition>();
      study::StudyService service(std::move(def), sv_data);
      study::StudyServer server(service);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "serving study " << service.definition().study_id << " on " << sv_host << ":" << sv_port << "\n";
      if (!server.listen(sv_host, sv_port)) throw Error("cannot listen on port " + std::to_string(sv_port));
      g_server = nullptr;
    }
  } catch (const PipelineError& e) {
    std::cerr << "error in stage " << e.stage() << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
