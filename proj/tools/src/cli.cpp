#include "mesm_cli/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mesm/analysis.hpp"
#include "mesm/checkpoint.hpp"
#include "mesm/config.hpp"
#include "mesm/data.hpp"
#include "mesm/plot.hpp"
#include "mesm/trainer.hpp"
#include "mesm_checks/criteria.hpp"

namespace mesm::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string device = "cpu";
};

void add_common(CLI::App* sub, Common& c, bool needs_out) {
  sub->add_option("--config", c.config_path, "key = value config file")->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "override one config key, key=value (repeatable)")->allow_extra_args(false);
  auto* out = sub->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
  sub->add_option("--seed", c.seed, "random seed");
  sub->add_option("--device", c.device, "compute device")->check(CLI::IsMember({"cpu", "gpu"}));
}

void check_device(const Common& c) {
  if (c.device != "cpu") throw ConfigError("--device " + c.device + ": this build only has the cpu backend");
}

RunConfig run_config(const Common& c) {
  RunConfig config = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
    config.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) config.seed = *c.seed;
  config.validate();
  return config;
}

template <typename M>
void append_bytes(std::string& buf, const M& m) {
  buf.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float));
}

// Content hash over every feature and annotation, independent of file paths.
std::string dataset_hash(const data::Dataset& ds) {
  std::string buf;
  std::set<const data::VideoRecord*> seen;
  for (const auto& s : ds.samples) {
    if (!seen.insert(s.record.get()).second) continue;
    const auto& v = s.record->video;
    buf += v.id + '\n' + std::to_string(v.duration) + '\n';
    append_bytes(buf, v.frames);
    for (const auto& q : s.record->queries) {
      buf += q.qid + '\n';
      for (int t : q.tokens) buf += std::to_string(t) + ',';
      append_bytes(buf, q.words);
      for (const auto& sp : q.spans) buf += std::to_string(sp.start) + ':' + std::to_string(sp.end) + ';';
    }
  }
  return fnv1a_hex(buf);
}

void write_manifest(const fs::path& dir, const std::string& command, const std::string& config_hash,
                    const std::vector<std::pair<std::string, std::string>>& datasets, std::uint64_t seed,
                    const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) {
  fs::create_directories(dir);
  nlohmann::ordered_json j;
  j["command"] = command;
  j["config_hash"] = config_hash;
  j["datasets"] = nlohmann::ordered_json::array();
  for (const auto& [path, hash] : datasets) j["datasets"].push_back({{"path", path}, {"hash", hash}});
  j["seed"] = seed;
  for (const auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream(dir / "run.json") << j.dump(2) << '\n';
}

std::string pct(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%7.2f", 100.0 * v);
  return buf;
}

data::Dataset load_or_throw(const std::string& path) {
  data::Dataset ds = data::load_dataset(path);
  if (ds.samples.empty()) throw data::LoadError(path + ": no queries");
  return ds;
}

void write_loss_plot(const fs::path& path, const std::vector<StepLog>& log) {
  std::vector<PlotSeries> series(5);
  const char* names[] = {"total", "l_vmr", "l_fw", "l_ss", "l_enc"};
  for (std::size_t k = 0; k < series.size(); ++k) series[k].name = names[k];
  for (const auto& s : log) {
    const double vals[] = {s.total, s.l_vmr, s.l_fw, s.l_ss, s.l_enc};
    for (std::size_t k = 0; k < series.size(); ++k) {
      series[k].x.push_back(static_cast<double>(s.step));
      series[k].y.push_back(vals[k]);
    }
  }
  // All-zero components (disabled modules) vanish on the log axis; drop them from the legend too.
  std::erase_if(series, [](const PlotSeries& p) {
    return std::all_of(p.y.begin(), p.y.end(), [](double y) { return y <= 0.0; });
  });
  write_line_plot(path, PlotSpec{"training loss", "step", "loss", true}, series);
}

// ---- synth ----------------------------------------------------------------

struct SynthArgs {
  Common common;
  std::string preset = "small";
  std::optional<int> videos, val_videos, frames, segments, queries, dim, vocab;
  std::optional<double> noise;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  check_device(a.common);
  data::SynthConfig sc;
  if (a.preset == "memorization") sc = checks::memorization_data();
  if (a.preset == "generalization") sc = checks::generalization_data();
  if (a.videos) sc.num_videos = *a.videos;
  if (a.val_videos) sc.num_val_videos = *a.val_videos;
  if (a.frames) sc.frames_per_video = *a.frames;
  if (a.segments) sc.segments_per_video = *a.segments;
  if (a.queries) sc.queries_per_video = *a.queries;
  if (a.dim) sc.video_dim = sc.text_dim = *a.dim;
  if (a.vocab) sc.concept_vocab = *a.vocab;
  if (a.noise) sc.noise = *a.noise;
  sc.validate();
  const std::uint64_t seed = a.common.seed.value_or(0);
  const auto summary = data::synth_generate(sc, seed, a.common.out);

  nlohmann::ordered_json params;
  params["num_videos"] = sc.num_videos;
  params["num_val_videos"] = sc.num_val_videos;
  params["frames_per_video"] = sc.frames_per_video;
  params["segments_per_video"] = sc.segments_per_video;
  params["queries_per_video"] = sc.queries_per_video;
  params["concept_vocab"] = sc.concept_vocab;
  params["concepts_per_segment"] = sc.concepts_per_segment;
  params["video_dim"] = sc.video_dim;
  params["text_dim"] = sc.text_dim;
  params["noise"] = sc.noise;
  params["withheld_fraction"] = sc.withheld_fraction;
  params["min_duration"] = sc.min_duration;
  params["max_duration"] = sc.max_duration;
  params["min_segment_frames"] = sc.min_segment_frames;

  std::vector<std::pair<std::string, std::string>> hashes;
  hashes.emplace_back(summary.train_manifest.string(), dataset_hash(data::load_dataset(summary.train_manifest)));
  if (!summary.val_manifest.empty())
    hashes.emplace_back(summary.val_manifest.string(), dataset_hash(data::load_dataset(summary.val_manifest)));
  write_manifest(a.common.out, "synth", fnv1a_hex(params.dump()), hashes, seed, {{"synth", params}});

  out << "wrote " << summary.train_queries << " training queries to " << summary.train_manifest.string() << "\n";
  if (!summary.val_manifest.empty())
    out << "wrote " << summary.val_queries << " validation queries to " << summary.val_manifest.string() << "\n";
  return kExitOk;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
  Common common;
  std::string data, val;
  int log_every = 50;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
  check_device(a.common);
  const RunConfig config = run_config(a.common);
  const data::Dataset train_set = load_or_throw(a.data);
  std::optional<data::Dataset> val;
  if (!a.val.empty()) val = load_or_throw(a.val);

  std::vector<std::pair<std::string, std::string>> hashes{{a.data, dataset_hash(train_set)}};
  if (val) hashes.emplace_back(a.val, dataset_hash(*val));
  const fs::path dir = a.common.out;
  write_manifest(dir, "train", config.hash(), hashes, config.seed);

  TrainOptions opts;
  opts.out_dir = dir;
  opts.validation = val ? &*val : nullptr;
  opts.on_step = [&](const StepLog& s) {
    if (a.log_every > 0 && s.step % a.log_every == 0)
      out << "step " << s.step << "  total " << s.total << "  l_vmr " << s.l_vmr << "\n";
  };
  opts.on_eval = [&](const EpochEval& e) {
    out << "epoch " << e.epoch << "  R1@0.5" << pct(e.report.recall_at(0.5)) << "  R1@0.7"
        << pct(e.report.recall_at(0.7)) << "  mIoU" << pct(e.report.miou) << "  mAP_avg" << pct(e.report.map_avg)
        << "\n";
  };
  const TrainResult result = train(config, train_set, opts);
  write_loss_plot(dir / "loss.svg", result.log);
  out << "trained " << result.log.size() << " steps; checkpoints in " << dir.string() << "\n";
  if (result.best)
    out << metric_table({{"best (epoch " + std::to_string(result.best->epoch) + ")", result.best->report}});
  return kExitOk;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
  Common common;
  std::string checkpoint, data;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  check_device(a.common);
  const LoadedCheckpoint ckpt = load_checkpoint(a.checkpoint);
  const data::Dataset ds = load_or_throw(a.data);
  const EvalOutput result = evaluate(*ckpt.model, ds, ckpt.config.batch_size);
  out << metric_table({{fs::path(a.checkpoint).filename().string(), result.report}});
  if (!a.common.out.empty()) {
    write_eval_artifacts(a.common.out, result);
    write_manifest(a.common.out, "eval", ckpt.config.hash(), {{a.data, dataset_hash(ds)}}, ckpt.config.seed,
                   {{"checkpoint", a.checkpoint}});
  }
  return kExitOk;
}

// ---- ablate ---------------------------------------------------------------

struct AblationRow {
  std::string label;
  std::vector<std::string> switches;
  bool fw = false, ss = false, enc = false;  // ticks for the main grid
};

std::vector<AblationRow> grid_rows(const std::string& grid) {
  if (grid == "main")
    return {{"baseline", {"fw_off", "ss_off", "enc_loss_off"}, false, false, false},
            {"FW", {"ss_off", "enc_loss_off"}, true, false, false},
            {"SS", {"fw_off", "enc_loss_off"}, false, true, false},
            {"L_enc", {"fw_off", "ss_off"}, false, false, true},
            {"FW+L_enc", {"ss_off"}, true, false, true},
            {"SS+L_enc", {"fw_off"}, false, true, true},
            {"all", {}, true, true, true}};
  if (grid == "mlm")
    return {{"w/o SS: 2xMA w/o FW", {"fw_off", "ss_off"}},
            {"w/o SS: 4xMA w/o FW", {"fw_off", "ss_off", "ma_layers=4"}},
            {"w/o SS: 2xFW+2xMA", {"ss_off"}},
            {"+SS: all w/o MLM", {"mlm_off"}},
            {"+SS: all", {}}};
  std::vector<AblationRow> rows;
  for (int n = 2; n <= 6; ++n) rows.push_back({"SS layers " + std::to_string(n), {"ss_layers=" + std::to_string(n)}});
  return rows;
}

std::string slug(const std::string& label) {
  std::string s;
  for (char c : label) {
    if (std::isalnum(static_cast<unsigned char>(c))) s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    else if (c == '+') s += "_plus_";
    else if (!s.empty() && s.back() != '_') s += '_';
  }
  while (!s.empty() && s.back() == '_') s.pop_back();
  return s;
}

struct AblateArgs {
  Common common;
  std::string data, val, grid = "main";
};

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  check_device(a.common);
  const RunConfig base = run_config(a.common);
  const auto rows = grid_rows(a.grid);
  std::vector<RunConfig> configs;
  for (const auto& r : rows) configs.push_back(ablate(base, r.switches));  // reject bad switches before training

  const data::Dataset train_set = load_or_throw(a.data);
  const data::Dataset val = load_or_throw(a.val);
  const fs::path dir = a.common.out;
  write_manifest(dir, "ablate", base.hash(), {{a.data, dataset_hash(train_set)}, {a.val, dataset_hash(val)}},
                 base.seed, {{"grid", a.grid}});

  std::vector<EvalReport> reports;
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << "[" << i + 1 << "/" << rows.size() << "] " << rows[i].label << "\n";
    TrainOptions opts;
    opts.out_dir = dir / slug(rows[i].label);
    opts.validation = &val;
    const TrainResult r = train(configs[i], train_set, opts);
    reports.push_back(r.best->report);
    nlohmann::ordered_json row;
    row["label"] = rows[i].label;
    row["switches"] = rows[i].switches;
    row["config_hash"] = configs[i].hash();
    row["best_epoch"] = r.best->epoch;
    row["report"] = nlohmann::ordered_json::parse(report_to_json(r.best->report));
    summary.push_back(row);
  }
  std::ofstream(dir / "ablation.json") << summary.dump(2) << '\n';

  std::ostringstream table;
  if (a.grid == "main") {
    table << " FW  SS  L_enc |  R1@0.5  R1@0.7    mIoU  mAP_avg\n";
    table << "---------------+---------------------------------\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto tick = [](bool on) { return on ? " x " : "   "; };
      table << " " << tick(rows[i].fw) << " " << tick(rows[i].ss) << "  " << tick(rows[i].enc) << "   |"
            << pct(reports[i].recall_at(0.5)) << " " << pct(reports[i].recall_at(0.7)) << " "
            << pct(reports[i].miou) << " " << pct(reports[i].map_avg) << "\n";
      if (i == 3) table << "---------------+---------------------------------\n";
    }
  } else {
    std::vector<std::pair<std::string, EvalReport>> labelled;
    for (std::size_t i = 0; i < rows.size(); ++i) labelled.emplace_back(rows[i].label, reports[i]);
    table << metric_table(labelled);
  }
  std::ofstream(dir / "ablation.txt") << table.str();
  out << table.str();
  return kExitOk;
}

// ---- probe ----------------------------------------------------------------

struct ProbeArgs {
  Common common;
  std::string checkpoint, data, qid;
  bool center = false;
};

int cmd_probe(const ProbeArgs& a, std::ostream& out) {
  check_device(a.common);
  const LoadedCheckpoint ckpt = load_checkpoint(a.checkpoint);
  const data::Dataset ds = load_or_throw(a.data);
  const data::Sample* sample = &ds.samples.front();
  if (!a.qid.empty()) {
    sample = nullptr;
    for (const auto& s : ds.samples)
      if (s.query().qid == a.qid) sample = &s;
    if (sample == nullptr) throw data::LoadError("no query " + a.qid + " in " + a.data);
  }
  const data::Batch batch = data::make_batch({*sample});
  ad::NoGradGuard no_grad;
  const auto fwd = ckpt.model->forward(batch, nn::Context<float>{false, 0.0f, nullptr}, ForwardOptions{false, true});
  const SampleTrace<float>& t = fwd.traces.front();
  const SubspaceReport report =
      subspace_probe(sample->query().qid, t.words.cast<double>(), t.enhanced_query.cast<double>(),
                     t.frames.cast<double>(), t.enhanced_frames.cast<double>(), t.gt, a.center);
  out << subspace_report_table(report);
  if (!a.common.out.empty()) {
    const fs::path dir = a.common.out;
    write_manifest(dir, "probe", ckpt.config.hash(), {{a.data, dataset_hash(ds)}}, ckpt.config.seed,
                   {{"checkpoint", a.checkpoint}, {"qid", report.qid}});
    std::ofstream(dir / "probe.json") << subspace_report_json(report) << '\n';
    std::ofstream(dir / "probe.txt") << subspace_report_table(report);
    std::vector<PlotSeries> series;
    for (const auto& c : report.curves) {
      PlotSeries s{c.text_variant + " text / " + c.video_variant + " video", {}, c.values};
      for (std::size_t i = 0; i < c.values.size(); ++i) s.x.push_back(static_cast<double>(i + 1));
      series.push_back(std::move(s));
    }
    write_line_plot(dir / "probe.svg", PlotSpec{"subspace similarity, query " + report.qid, "i", "similarity", false},
                    series);
  }
  return kExitOk;
}

// ---- selftest -------------------------------------------------------------

struct SelftestArgs {
  Common common;
  bool full = false;
};

int cmd_selftest(const SelftestArgs& a, std::ostream& out, std::ostream& err) {
  check_device(a.common);
  const bool scratch = a.common.out.empty();
  const fs::path dir = scratch ? fs::temp_directory_path() / ("mesm_selftest_" + std::to_string(std::random_device{}()))
                               : fs::path(a.common.out);
  fs::create_directories(dir);
  checks::AcceptanceOptions opts{dir, a.full ? &err : nullptr};
  std::vector<int> ids = checks::quick_criteria();
  if (a.full) ids = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};
  int failed = 0;
  nlohmann::ordered_json results = nlohmann::ordered_json::array();
  for (int id : ids) {
    const auto r = checks::run_criterion(id, opts);
    out << checks::format_result(r) << std::endl;
    failed += r.passed ? 0 : 1;
    results.push_back({{"id", r.id}, {"name", r.name}, {"passed", r.passed}, {"detail", r.detail}});
  }
  if (scratch) {
    fs::remove_all(dir);
  } else {
    write_manifest(dir, "selftest", "", {}, 0, {{"full", a.full}, {"results", results}});
  }
  out << (failed == 0 ? "all checks passed" : std::to_string(failed) + " checks failed") << "\n";
  return failed == 0 ? kExitOk : kExitInvalid;
}

}  // namespace

std::string metric_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t width = 8;
  for (const auto& [label, r] : rows) width = std::max(width, label.size());
  std::ostringstream o;
  o << std::string(width, ' ') << " |  R1@0.5  R1@0.7    mIoU  mAP_avg\n";
  o << std::string(width + 1, '-') << "+---------------------------------\n";
  for (const auto& [label, r] : rows)
    o << label << std::string(width - label.size(), ' ') << " |" << pct(r.recall_at(0.5)) << " "
      << pct(r.recall_at(0.7)) << " " << pct(r.miou) << " " << pct(r.map_avg) << "\n";
  return o.str();
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Training, evaluation and analysis for enhanced cross-modal moment retrieval", "mesm"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(s, synth.common, true);
  s->add_option("--preset", synth.preset, "base settings")
      ->check(CLI::IsMember({"small", "memorization", "generalization"}));
  s->add_option("--videos", synth.videos, "training videos");
  s->add_option("--val-videos", synth.val_videos, "validation videos");
  s->add_option("--frames", synth.frames, "frames per video");
  s->add_option("--segments", synth.segments, "segments per video");
  s->add_option("--queries", synth.queries, "queries per video");
  s->add_option("--dim", synth.dim, "video and text feature width");
  s->add_option("--vocab", synth.vocab, "concept vocabulary size");
  s->add_option("--noise", synth.noise, "frame noise standard deviation");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model");
  add_common(t, tr.common, true);
  t->add_option("--data", tr.data, "training manifest")->required()->check(CLI::ExistingFile);
  t->add_option("--val", tr.val, "validation manifest")->check(CLI::ExistingFile);
  t->add_option("--log-every", tr.log_every, "steps between loss lines, 0 for none");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(e, ev.common, false);
  e->add_option("--checkpoint", ev.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data, "manifest to evaluate on")->required()->check(CLI::ExistingFile);

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "train every row of an ablation grid");
  add_common(b, ab.common, true);
  b->add_option("--data", ab.data, "training manifest")->required()->check(CLI::ExistingFile);
  b->add_option("--val", ab.val, "validation manifest")->required()->check(CLI::ExistingFile);
  b->add_option("--grid", ab.grid, "main: FW/SS/L_enc toggles; mlm: MLM rows; ss-layers: SS depth 2..6")
      ->check(CLI::IsMember({"main", "mlm", "ss-layers"}));

  ProbeArgs pr;
  auto* p = app.add_subcommand("probe", "subspace similarity of one query and its segment");
  add_common(p, pr.common, false);
  p->add_option("--checkpoint", pr.checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
  p->add_option("--data", pr.data, "manifest holding the query")->required()->check(CLI::ExistingFile);
  p->add_option("--qid", pr.qid, "query id (default: first)");
  p->add_flag("--center", pr.center, "subtract column means first");

  SelftestArgs st;
  auto* x = app.add_subcommand("selftest", "run the acceptance checks");
  add_common(x, st.common, false);
  x->add_flag("--full", st.full, "include the training runs (hours)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex, out, err);
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n\n";
    const CLI::App* failing = &app;
    for (const auto* sub : app.get_subcommands()) failing = sub;
    err << failing->help();
    return kExitInvalid;
  }

  try {
    if (*s) return cmd_synth(synth, out);
    if (*t) return cmd_train(tr, out);
    if (*e) return cmd_eval(ev, out);
    if (*b) return cmd_ablate(ab, out);
    if (*p) return cmd_probe(pr, out);
    return cmd_selftest(st, out, err);
  } catch (const TrainingAborted& ex) {
    err << "training aborted: " << ex.what() << "\n";
    return kExitNonFinite;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitInvalid;
  }
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv{"mesm"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace mesm::cli
