#include "affordrep/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <numbers>
#include <set>

#include "CLI11.hpp"
#include "affordrep/affordance.hpp"
#include "affordrep/checkpoint.hpp"
#include "affordrep/config.hpp"
#include "affordrep/datasets.hpp"
#include "affordrep/encoder.hpp"
#include "affordrep/evalbench.hpp"
#include "affordrep/parallel.hpp"
#include "affordrep/report.hpp"
#include "affordrep/stats.hpp"

namespace affordrep::cli {

namespace fs = std::filesystem;
using nlohmann::json;

OutputLock::OutputLock(const fs::path& out_dir) : path_(out_dir / kLockName) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out_dir.string());
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST)
      throw LockError("output directory " + out_dir.string() + " is locked by another invocation (" +
                      path_.string() + "); remove the lock file if no other run is active");
    throw std::runtime_error("cannot create lock file " + path_.string());
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

OutputLock::~OutputLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

std::string artifact_hash(const fs::path& p) {
  if (fs::is_directory(p)) return tree_sha256(p);
  if (fs::is_regular_file(p)) return sha256_file(p);
  throw MissingInputError("artifact not found: " + p.string());
}

namespace {

struct Ctx {
  ExperimentConfig cfg;
  fs::path out;
  std::optional<std::uint64_t> seed_override;
  std::ostream& log;
};

void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << content;
  if (!f) throw std::runtime_error("write failed for " + p.string());
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw MissingInputError("missing " + p.string());
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw StaleInputError("unreadable " + p.string() + ": " + e.what());
  }
}

std::string rel(const Ctx& c, const fs::path& p) { return fs::relative(p, c.out).generic_string(); }

std::string run_dir_name(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

// Upstream stage record, checked against the current config.
struct Upstream {
  std::string stage;
  json prov;
  std::vector<json> used;  // inputs entries for our provenance
};

Upstream require_stage(const Ctx& c, const std::string& stage) {
  const fs::path p = c.out / stage / "provenance.json";
  if (!fs::exists(p)) throw MissingInputError("missing upstream artifact " + p.string() + "; run `" + stage + "` first");
  Upstream u{stage, read_json(p), {}};
  if (u.prov.value("schema", "") != kProvenanceSchema) throw StaleInputError("unrecognised provenance in " + p.string());
  if (u.prov.at("stage_hash").get<std::string>() != stage_hash(c.cfg, stage))
    throw StaleInputError("stale input: " + stage + " outputs in " + c.out.string() +
                          " were produced from a different configuration; re-run `" + stage + "`");
  return u;
}

// Recomputes the hash of an upstream output and compares it with the record.
fs::path use_output(const Ctx& c, Upstream& u, const std::string& relpath) {
  const json& outs = u.prov.at("outputs");
  if (!outs.contains(relpath))
    throw MissingInputError("upstream " + u.stage + " did not produce " + relpath + "; re-run `" + u.stage + "`");
  const fs::path p = c.out / relpath;
  if (!fs::exists(p)) throw MissingInputError("missing upstream artifact " + p.string());
  const std::string h = artifact_hash(p);
  if (h != outs.at(relpath).get<std::string>())
    throw StaleInputError("hash mismatch for " + p.string() + ": content changed since `" + u.stage + "` wrote it");
  u.used.push_back({{"stage", u.stage}, {"path", relpath}, {"sha256", h}});
  return p;
}

void write_provenance(const Ctx& c, const std::string& stage, const std::vector<Upstream>& ups,
                      const std::vector<fs::path>& outputs) {
  json inputs = json::array();
  for (const auto& u : ups)
    for (const auto& e : u.used) inputs.push_back(e);
  json outs = json::object();
  for (const auto& p : outputs) outs[rel(c, p)] = artifact_hash(p);
  const json prov = {{"schema", kProvenanceSchema},
                     {"stage", stage},
                     {"config_hash", config_hash(c.cfg)},
                     {"stage_hash", stage_hash(c.cfg, stage)},
                     {"seed_override", c.seed_override ? json(*c.seed_override) : json(nullptr)},
                     {"inputs", inputs},
                     {"outputs", outs}};
  write_file(c.out / stage / "provenance.json", dump(prov));
  write_file(c.out / stage / "config.json", dump(to_json(c.cfg)));
}

// ---- collect ----

int cmd_collect(Ctx& c) {
  const fs::path dir = c.out / "collect";
  std::vector<fs::path> outputs;
  {
    c.log << "collect: " << c.cfg.collect.duration_steps << " steps on " << c.cfg.collect.map_id << " ("
          << to_string(c.cfg.collect.policy.kind) << " policy)\n";
    const Dataset du = collect(c.cfg.collect);
    write_dataset(du, dir / "du");
    outputs.push_back(dir / "du");
    const WeakSplitResult weak = subsample_weak(du, c.cfg.weak.fraction, c.cfg.weak.sigma_target, c.cfg.weak.seed);
    if (weak.fell_back) c.log << "collect: weak split fell back to all centre frames (ESS " << weak.ess << ")\n";
    write_dataset(weak.dl, dir / "dl");
    outputs.push_back(dir / "dl");
  }
  CollectConfig t = c.cfg.collect;
  t.map_id = c.cfg.eval.test.map_id;
  t.duration_steps = c.cfg.eval.test.steps;
  t.seed = c.cfg.eval.test.seed;
  t.cameras = {Camera::Center};
  t.policy.kind = PolicyKind::Expert;
  c.log << "collect: test set, " << t.duration_steps << " steps on " << t.map_id << "\n";
  write_dataset(collect(t), dir / "test");
  outputs.push_back(dir / "test");
  write_provenance(c, "collect", {}, outputs);
  return kExitOk;
}

// ---- pretrain ----

int cmd_pretrain(Ctx& c) {
  Upstream up = require_stage(c, "collect");
  const Dataset du = read_dataset(use_output(c, up, "collect/du"));
  std::vector<fs::path> outputs;
  for (PretrainMethod m : c.cfg.pretrain.methods)
    for (std::uint64_t seed : c.cfg.pretrain.seeds) {
      TrainConfig t = c.cfg.pretrain.train;
      t.seed = seed;
      c.log << "pretrain: " << to_string(m) << " seed " << seed << ", " << t.iterations << " iterations\n";
      const PretrainResult r = pretrain(du, m, t);
      const fs::path run = c.out / "pretrain" / to_string(m) / run_dir_name(seed);
      save_encoder(run / "encoder", r.encoder, {{"method", to_string(m)}, {"seed", seed}, {"iterations", t.iterations}});
      write_training_log(r.log, run / "log.csv");
      outputs.push_back(run);
    }
  write_provenance(c, "pretrain", {up}, outputs);
  return kExitOk;
}

// ---- probe / finetune ----

std::uint64_t head_seed(const ExperimentConfig& cfg, std::size_t i) {
  return cfg.affordance.seeds[i % cfg.affordance.seeds.size()];
}

int cmd_affordance(Ctx& c, bool finetune) {
  const std::string stage = finetune ? "finetune" : "probe";
  Upstream col = require_stage(c, "collect");
  Upstream pre = require_stage(c, "pretrain");
  const Dataset dl = read_dataset(use_output(c, col, "collect/dl"));
  const Dataset test = read_dataset(use_output(c, col, "collect/test"));
  const Dataset du = read_dataset(use_output(c, col, "collect/du"));
  const std::string data = to_string(c.cfg.collect.policy.kind);
  std::vector<fs::path> outputs;
  std::vector<ProbeRow> rows;
  for (PretrainMethod m : c.cfg.pretrain.methods)
    for (std::size_t i = 0; i < c.cfg.pretrain.seeds.size(); ++i) {
      const std::uint64_t seed = c.cfg.pretrain.seeds[i];
      const std::string run_rel = std::string("pretrain/") + to_string(m) + "/" + run_dir_name(seed);
      const Encoder<float> enc = load_encoder(use_output(c, pre, run_rel) / "encoder");
      const fs::path run = c.out / stage / to_string(m) / run_dir_name(seed);
      c.log << stage << ": " << to_string(m) << " seed " << seed << "\n";
      ProbeRow row;
      row.stage = stage;
      row.method = to_string(m);
      row.data = data;
      const json meta = {{"method", to_string(m)}, {"seed", seed}, {"head_seed", head_seed(c.cfg, i)}};
      std::vector<AffordanceLogRow> log;
      if (finetune) {
        FinetuneResult r = train_finetune(enc, dl, c.cfg.affordance.train, head_seed(c.cfg, i));
        save_encoder(run / "encoder", r.encoder, meta);
        save_head(run / "head", r.head, meta);
        row.report = evaluate_affordances(r.encoder, r.head, test);
        row.heldout_loss = affordance_eval_loss(r.encoder, r.head, du, c.cfg.affordance.train.loss);
        log = std::move(r.log);
      } else {
        ProbeResult r = train_probe(enc, dl, c.cfg.affordance.train, head_seed(c.cfg, i), &du);
        save_head(run / "head", r.head, meta);
        row.report = evaluate_affordances(enc, r.head, test);
        row.heldout_loss = affordance_eval_loss(enc, r.head, du, c.cfg.affordance.train.loss);
        log = std::move(r.log);
      }
      row.report.seed = seed;
      std::ostringstream csv;
      csv << std::setprecision(9) << "iteration,loss\n";
      for (const auto& l : log) csv << l.iteration << ',' << l.loss << '\n';
      write_file(run / "log.csv", csv.str());
      write_file(run / "report.json", dump(to_json(row)));
      outputs.push_back(run);
      rows.push_back(row);
    }
  write_file(c.out / stage / "report.csv", probe_csv(rows));
  write_file(c.out / stage / "report.md", probe_markdown(rows));
  outputs.push_back(c.out / stage / "report.csv");
  outputs.push_back(c.out / stage / "report.md");
  write_provenance(c, stage, {col, pre}, outputs);
  return kExitOk;
}

// ---- tune-pid ----

json gains_json(const PIDGains& g) {
  return {{"kp", g.kp},         {"ki", g.ki},         {"kd", g.kd},   {"speed_kp", g.speed_kp},
          {"speed_ki", g.speed_ki}, {"speed_kd", g.speed_kd}, {"v_target", g.v_target}, {"tau", g.tau},
          {"i_max", g.i_max}};
}

PIDGains gains_from_json(const json& j) {
  PIDGains g;
  g.kp = j.at("kp");
  g.ki = j.at("ki");
  g.kd = j.at("kd");
  g.speed_kp = j.at("speed_kp");
  g.speed_ki = j.at("speed_ki");
  g.speed_kd = j.at("speed_kd");
  g.v_target = j.at("v_target");
  g.tau = j.at("tau");
  g.i_max = j.at("i_max");
  g.validate();
  return g;
}

int cmd_tune_pid(Ctx& c) {
  SuiteSpec spec;
  spec.network = std::make_shared<RoadNetwork>(generate_map("townA", c.cfg.sim));
  spec.densities = {Density::Dense};
  spec.conditions = c.cfg.eval.conditions;
  spec.seeds = c.cfg.eval.seeds;
  spec.routes = c.cfg.eval.routes;
  spec.step_cap = c.cfg.eval.step_cap;
  spec.workers = worker_count();
  std::vector<TuneTrial> trials;
  std::optional<PIDGains> best;
  std::string failure;
  try {
    best = tune_gains(expert_suite_evaluator(spec), c.cfg.controller.grid, &trials);
  } catch (const TuningError& e) {
    failure = e.what();
  }
  json tj = json::array();
  for (const auto& t : trials)
    tj.push_back({{"gains", gains_json(t.gains)},
                  {"episodes", t.outcome.episodes},
                  {"successes", t.outcome.successes},
                  {"collisions", t.outcome.collisions},
                  {"red_light", t.outcome.red_light}});
  const fs::path dir = c.out / "tune-pid";
  write_file(dir / "trials.json", dump(tj));
  if (!best) {
    c.log << "tune-pid: " << failure << "\n";
    return kExitFailure;
  }
  write_file(dir / "gains.json", dump(gains_json(*best)));
  ExperimentConfig tuned = c.cfg;
  tuned.controller.tune = false;
  tuned.controller.gains = *best;
  write_file(dir / "config.tuned.json", dump(to_json(tuned)));
  write_provenance(c, "tune-pid", {}, {dir / "trials.json", dir / "gains.json", dir / "config.tuned.json"});
  c.log << "tune-pid: accepted kp=" << best->kp << " ki=" << best->ki << " kd=" << best->kd << "\n";
  return kExitOk;
}

// ---- drive ----

int cmd_drive(Ctx& c) {
  std::vector<Upstream> ups;
  PIDGains gains = c.cfg.controller.gains;
  if (c.cfg.controller.tune) {
    ups.push_back(require_stage(c, "tune-pid"));
    gains = gains_from_json(read_json(use_output(c, ups.back(), "tune-pid/gains.json")));
  }
  DriverFactory factory;
  json selection = {{"driver", to_string(c.cfg.eval.driver)}};
  std::shared_ptr<const Encoder<float>> enc;
  std::shared_ptr<const AffordanceHead<float>> head;
  if (c.cfg.eval.driver == DriveSource::Expert) {
    factory = [gains] { return std::make_unique<ExpertDriver>(gains); };
  } else {
    const bool ft = c.cfg.eval.driver == DriveSource::Finetune;
    const std::string stage = ft ? "finetune" : "probe";
    ups.push_back(require_stage(c, stage));
    Upstream& u = ups.back();
    std::optional<Upstream> pre;
    if (!ft) pre = require_stage(c, "pretrain");
    const std::string m = to_string(c.cfg.eval.method);
    std::vector<double> scores;
    std::vector<fs::path> runs;
    for (std::uint64_t seed : c.cfg.pretrain.seeds) {
      const fs::path run = use_output(c, u, stage + "/" + m + "/" + run_dir_name(seed));
      scores.push_back(-read_json(run / "report.json").at("heldout_loss").get<double>());
      runs.push_back(run);
    }
    const std::size_t k = aggregate_and_select(scores);
    const std::uint64_t seed = c.cfg.pretrain.seeds[k];
    selection["method"] = m;
    selection["seed"] = seed;
    selection["heldout_loss"] = -scores[k];
    head = std::make_shared<AffordanceHead<float>>(load_head(runs[k] / "head"));
    if (ft) {
      enc = std::make_shared<Encoder<float>>(load_encoder(runs[k] / "encoder"));
    } else {
      const fs::path e = use_output(c, *pre, "pretrain/" + m + "/" + run_dir_name(seed));
      enc = std::make_shared<Encoder<float>>(load_encoder(e / "encoder"));
      ups.push_back(*pre);
    }
    factory = [enc, head, gains] { return std::make_unique<LearnedDriver>(enc, head, gains); };
  }
  std::vector<DrivingReport> reports;
  json episodes = json::array();
  for (const std::string& town : c.cfg.eval.towns) {
    SuiteSpec spec;
    spec.network = std::make_shared<RoadNetwork>(generate_map(town, c.cfg.sim));
    spec.densities = c.cfg.eval.densities;
    spec.conditions = c.cfg.eval.conditions;
    spec.seeds = c.cfg.eval.seeds;
    spec.routes = c.cfg.eval.routes;
    spec.step_cap = c.cfg.eval.step_cap;
    spec.workers = worker_count();
    c.log << "drive: " << town << "\n";
    std::vector<EpisodeRecord> eps;
    for (auto& r : nocrash_suite(factory, spec, &eps)) reports.push_back(std::move(r));
    for (const auto& e : eps)
      episodes.push_back({{"town", town},
                          {"density", to_string(e.density)},
                          {"route", e.route},
                          {"condition", e.condition},
                          {"seed", e.seed},
                          {"outcome", to_string(e.outcome)},
                          {"steps", e.steps},
                          {"lights_crossed", e.lights_crossed},
                          {"red_violations", e.red_violations}});
  }
  const fs::path dir = c.out / "drive";
  write_file(dir / "driving.csv", driving_csv(reports));
  write_file(dir / "driving.md", driving_markdown(reports));
  write_file(dir / "episodes.json", dump(episodes));
  write_file(dir / "selection.json", dump(selection));
  write_provenance(c, "drive", ups,
                   {dir / "driving.csv", dir / "driving.md", dir / "episodes.json", dir / "selection.json"});
  return kExitOk;
}

// ---- report ----

int cmd_report(const std::vector<std::string>& paths, const fs::path& out, std::ostream& log) {
  std::vector<ProbeRow> rows;
  std::map<std::string, std::vector<LogRow>> curves;
  std::vector<std::string> driving;
  for (const std::string& p : paths) {
    if (!fs::exists(p)) throw MissingInputError("report input not found: " + p);
    std::vector<fs::path> files;
    if (fs::is_regular_file(p)) {
      files.push_back(p);
    } else {
      for (const auto& e : fs::recursive_directory_iterator(p))
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files) {
      const std::string name = f.filename().string();
      const std::string parent = f.parent_path().parent_path().parent_path().filename().string();
      if (name == "report.json") {
        rows.push_back(probe_row_from_json(read_json(f)));
      } else if (name == "log.csv" && parent == "pretrain") {
        const std::string key = f.parent_path().parent_path().filename().string() + " " +
                                f.parent_path().filename().string();
        curves[key] = read_training_log(f);
      } else if (name == "driving.csv") {
        std::ifstream in(f);
        std::stringstream ss;
        ss << in.rdbuf();
        driving.push_back(ss.str());
      }
    }
  }
  if (rows.empty() && curves.empty() && driving.empty())
    throw MissingInputError("no probe reports, training logs or driving reports found under the given paths");

  fs::create_directories(out);
  write_file(out / "report.csv", probe_csv(rows));
  std::string md = "# Results\n\n## Affordance probing\n\n" + probe_markdown(rows);
  if (!driving.empty()) {
    md += "\n## Driving\n\n```\n";
    for (const auto& d : driving) md += d;
    md += "```\n";
  }
  write_file(out / "report.md", md);

  std::vector<Series> loss;
  for (const auto& [name, log_rows] : curves) {
    Series s{name, {}};
    // thin long logs to at most ~400 points per curve
    const std::size_t stride = std::max<std::size_t>(1, log_rows.size() / 400);
    for (std::size_t i = 0; i < log_rows.size(); i += stride)
      s.points.emplace_back(log_rows[i].iteration, log_rows[i].loss);
    loss.push_back(std::move(s));
  }
  write_file(out / "loss_curves.svg", svg_line_chart("Pre-training loss", "iteration", "loss", loss, true));

  // straight / pooled psi MAE per method, seed means, in degrees
  std::map<std::string, std::vector<double>> straight, pooled;
  for (const auto& r : rows) {
    const std::string key = r.stage + " " + r.data + " " + r.method;
    if (r.report.mae.straight) straight[key].push_back(*r.report.mae.straight * 180.0 / std::numbers::pi);
    pooled[key].push_back(r.report.mae.pooled * 180.0 / std::numbers::pi);
  }
  std::vector<std::string> cats{"straight", "pooled"};
  std::vector<Series> bars;
  for (const auto& [key, v] : pooled) {
    Series s{key, {}};
    if (straight.count(key)) s.points.emplace_back(0.0, affordrep::mean(straight[key]));
    s.points.emplace_back(1.0, affordrep::mean(v));
    bars.push_back(std::move(s));
  }
  write_file(out / "scores.svg", svg_bar_chart("Heading MAE on test frames", "MAE (deg)", cats, bars));
  log << "report: " << rows.size() << " probe rows, " << curves.size() << " training logs, " << driving.size()
      << " driving reports\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Affordance representation pipeline: collect, pretrain, probe, finetune, tune-pid, drive, report"};
  app.require_subcommand(1, 1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed_override;
  std::vector<std::string> report_paths;

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config_path, "experiment config JSON");
    if (needs_config) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed-override", seed_override, "replace every stage seed with N");
  };
  const std::vector<std::pair<std::string, std::string>> verbs = {
      {"collect", "collect Du, the weak split Dl and the test set"},
      {"pretrain", "pre-train encoders for every configured method and seed"},
      {"probe", "train linear probes on frozen encoders and evaluate them"},
      {"finetune", "fine-tune encoders with an mlp3 affordance head"},
      {"tune-pid", "grid-search PID gains on the training town (dense)"},
      {"drive", "run the driving benchmark"}};
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : verbs) {
    subs[name] = app.add_subcommand(name, help);
    common(subs[name], true);
  }
  CLI::App* report = app.add_subcommand("report", "summarize probe reports, training logs and driving reports");
  common(report, false);
  report->add_option("paths", report_paths, "output directories or report files")->required();

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitSchema;
  }

  try {
    const fs::path outp(out_dir);
    if (report->parsed()) {
      OutputLock lock(outp);
      return cmd_report(report_paths, outp, err);
    }
    Ctx c{{}, outp, seed_override, err};
    c.cfg = load_config(config_path);
    if (seed_override) apply_seed_override(c.cfg, *seed_override);
    OutputLock lock(outp);
    if (subs["collect"]->parsed()) return cmd_collect(c);
    if (subs["pretrain"]->parsed()) return cmd_pretrain(c);
    if (subs["probe"]->parsed()) return cmd_affordance(c, false);
    if (subs["finetune"]->parsed()) return cmd_affordance(c, true);
    if (subs["tune-pid"]->parsed()) return cmd_tune_pid(c);
    if (subs["drive"]->parsed()) return cmd_drive(c);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitSchema;
  } catch (const LockError& e) {
    err << "error: " << e.what() << "\n";
    return kExitLocked;
  } catch (const MissingInputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitMissingInput;
  } catch (const StaleInputError& e) {
    err << "error: " << e.what() << "\n";
    return kExitStaleInput;
  } catch (const DatasetError& e) {
    err << "error: " << e.what() << "\n";
    return kExitStaleInput;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kExitStaleInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace affordrep::cli
