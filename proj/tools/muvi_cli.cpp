// Experiment driver: data generation, source training, per-method test-time
// adaptation runs, metric evaluation, aggregated tables, and qualitative
// overlays. Every subcommand persists its fully-resolved configuration next
// to its outputs so a run can be reproduced from the artifacts alone.
//
// Exit codes: 0 success, 2 user/configuration error, 1 internal error.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "muvi/baselines.hpp"
#include "muvi/checkpoint.hpp"
#include "muvi/engine.hpp"
#include "muvi/io.hpp"
#include "muvi/metrics.hpp"
#include "muvi/overlay.hpp"
#include "muvi/phantom.hpp"
#include "muvi/png.hpp"
#include "muvi/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace muvi;

namespace {

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Relative output paths are joined under $MUVI_OUT_ROOT when it is set, so a
/// whole experiment can be redirected without touching the command lines.
fs::path resolve_out(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("MUVI_OUT_ROOT")) return fs::path(root) / p;
  return p;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

/// Fill CLI options that the user did not pass from a JSON config file, so
/// flags always win over the file.
void apply_config_file(CLI::App* cmd, const fs::path& path) {
  const json cfg = read_json(path);
  if (!cfg.is_object()) throw ConfigError("config file " + path.string() + " must hold a JSON object");
  for (const auto& [key, value] : cfg.items()) {
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (opt == nullptr) throw ConfigError("config file " + path.string() + " has unknown key '" + key + "'");
    if (opt->count() > 0) continue;  // explicit flag wins
    std::vector<std::string> words;
    if (value.is_array())
      for (const auto& v : value) words.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    else if (value.is_string())
      words.push_back(value.get<std::string>());
    else
      words.push_back(value.dump());
    opt->add_result(words);
    opt->run_callback();
  }
}

void write_resolved_config(const fs::path& dir, const std::string& command, const json& resolved) {
  json out = resolved;
  out["command"] = command;
  write_json(dir / (command + ".config.json"), out);
}

std::string format_mean_std(double mean, double stdev) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f ± %.4f", mean, stdev);
  return buf;
}

/// Terminal column width of a UTF-8 cell ("±" is 2 bytes, 1 column).
std::size_t display_width(const std::string& s) {
  std::size_t w = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++w;
  return w;
}

std::string pad_cell(const std::string& s, std::size_t width) {
  std::string out = s;
  for (std::size_t w = display_width(s); w < width; ++w) out += ' ';
  return out;
}

/// Fixed-width table: one row per method with mean ± std for every metric
/// plus the count of cases whose surface distances were undefined.
std::string render_table(const std::vector<std::pair<std::string, json>>& rows) {
  const std::vector<std::string> headers{"method", "dsc", "hausdorff_mm", "asd_mm", "undefined"};
  std::vector<std::vector<std::string>> cells;
  for (const auto& [method, s] : rows)
    cells.push_back({method, format_mean_std(s.at("dsc_mean"), s.at("dsc_std")),
                     format_mean_std(s.at("hausdorff_mean"), s.at("hausdorff_std")),
                     format_mean_std(s.at("asd_mean"), s.at("asd_std")),
                     std::to_string(s.value("undefined_distances", 0))});
  std::vector<std::size_t> widths;
  for (std::size_t c = 0; c < headers.size(); ++c) {
    std::size_t w = display_width(headers[c]);
    for (const auto& row : cells) w = std::max(w, display_width(row[c]));
    widths.push_back(w);
  }
  auto emit_row = [&](const std::vector<std::string>& row) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) line += "  ";
      line += c + 1 < row.size() ? pad_cell(row[c], widths[c]) : row[c];
    }
    return line + "\n";
  };
  std::string table = emit_row(headers);
  for (const auto& row : cells) table += emit_row(row);
  return table;
}

/// Volume/mask/prediction triplets discovered by filename convention:
/// case_xxx.nii[.gz] with optional case_xxx_mask / case_xxx_pred siblings.
struct CaseFiles {
  std::string id;
  fs::path volume;
  fs::path mask;
  fs::path prediction;
};

std::string strip_nii_suffix(std::string name) {
  for (const char* suffix : {".nii.gz", ".nii", ".raw"}) {
    if (name.size() > std::strlen(suffix) && name.ends_with(suffix))
      return name.substr(0, name.size() - std::strlen(suffix));
  }
  return "";
}

std::vector<CaseFiles> scan_cases(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("data directory does not exist: " + dir.string());
  std::map<std::string, CaseFiles> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string stem = strip_nii_suffix(entry.path().filename().string());
    if (stem.empty()) continue;
    if (stem.ends_with("_mask")) {
      auto& c = found[stem.substr(0, stem.size() - 5)];
      c.mask = entry.path();
    } else if (stem.ends_with("_pred")) {
      auto& c = found[stem.substr(0, stem.size() - 5)];
      c.prediction = entry.path();
    } else {
      auto& c = found[stem];
      c.volume = entry.path();
    }
  }
  std::vector<CaseFiles> out;
  for (auto& [id, c] : found) {
    c.id = id;
    out.push_back(c);
  }
  return out;  // std::map iteration keeps ids sorted
}

std::vector<PhantomCase> load_labeled_cases(const fs::path& dir) {
  std::vector<PhantomCase> cases;
  for (const CaseFiles& f : scan_cases(dir)) {
    if (f.volume.empty() || f.mask.empty()) continue;
    PhantomCase c;
    c.case_id = f.id;
    c.volume = read_volume(f.volume);
    c.mask = read_mask(f.mask);
    cases.push_back(std::move(c));
  }
  if (cases.empty()) throw ConfigError("no volume/mask pairs found in " + dir.string());
  return cases;
}

// ---------------------------------------------------------------------------
// generate-data
// ---------------------------------------------------------------------------

DomainSpec domain_from_json(const json& j, const std::string& origin) {
  if (!j.is_object()) throw ConfigError("domain spec in " + origin + " must be a JSON object");
  DomainSpec d;
  for (const auto& [key, value] : j.items()) {
    if (key == "contrast_scale")
      d.contrast_scale = value.get<double>();
    else if (key == "intensity_gamma")
      d.intensity_gamma = value.get<double>();
    else if (key == "bias_field_amplitude")
      d.bias_field_amplitude = value.get<double>();
    else if (key == "noise_std")
      d.noise_std = value.get<double>();
    else if (key == "blur_sigma_mm")
      for (int a = 0; a < 3; ++a) d.blur_sigma_mm[static_cast<std::size_t>(a)] = value.at(a).get<double>();
    else if (key == "spacing")
      for (int a = 0; a < 3; ++a) d.spacing[static_cast<std::size_t>(a)] = value.at(a).get<double>();
    else
      throw ConfigError("unknown domain field '" + key + "' in " + origin);
  }
  d.validate();
  return d;
}

json domain_to_json(const DomainSpec& d) {
  return json{{"contrast_scale", d.contrast_scale},
              {"intensity_gamma", d.intensity_gamma},
              {"bias_field_amplitude", d.bias_field_amplitude},
              {"blur_sigma_mm", {d.blur_sigma_mm[0], d.blur_sigma_mm[1], d.blur_sigma_mm[2]}},
              {"spacing", {d.spacing[0], d.spacing[1], d.spacing[2]}},
              {"noise_std", d.noise_std}};
}

struct GenerateArgs {
  std::string domain_file;
  int n = 0;
  std::uint64_t seed = 0;
  std::vector<int> shape{64, 64, 64};
  std::string out;
};

int cmd_generate_data(const GenerateArgs& args) {
  if (!fs::exists(args.domain_file))
    throw ConfigError("domain spec file not found: " + args.domain_file);
  const DomainSpec domain = domain_from_json(read_json(args.domain_file), args.domain_file);
  const Shape3 shape{args.shape.at(0), args.shape.at(1), args.shape.at(2)};
  const fs::path out = resolve_out(args.out);
  ensure_dir(out);

  std::ofstream manifest(out / "manifest.csv", std::ios::trunc);
  manifest << "case_id,seed,domain_hash\n";
  for (int i = 0; i < args.n; ++i) {
    const PhantomCase c = generate_phantom(args.seed + static_cast<std::uint64_t>(i), shape, domain);
    write_volume(out / (c.case_id + ".nii.gz"), c.volume);
    write_mask(out / (c.case_id + "_mask.nii.gz"), c.mask);
    manifest << c.case_id << "," << c.seed << "," << c.domain.hash() << "\n";
  }
  manifest.close();

  write_json(out / "domain.json", domain_to_json(domain));
  write_resolved_config(out, "generate-data",
                        json{{"domain", domain_to_json(domain)},
                             {"n", args.n},
                             {"seed", args.seed},
                             {"shape", args.shape},
                             {"out", out.string()}});
  std::printf("wrote %d cases to %s\n", args.n, out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// train-source
// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string val;
  std::string out;
  std::string norm = "batch_norm";
  int channels = 8;
  int depth = 3;
  int patch = 32;
  TrainConfig cfg;
  std::uint64_t model_seed = 0;
  bool model_seed_set = false;
};

int cmd_train_source(const TrainArgs& args) {
  if (args.norm != "batch_norm" && args.norm != "instance_norm")
    throw ConfigError("--norm must be batch_norm or instance_norm, got " + args.norm);
  const NormPolicy policy = args.norm == "batch_norm" ? NormPolicy::batch() : NormPolicy::instance();
  const std::uint64_t model_seed = args.model_seed_set ? args.model_seed : args.cfg.seed;

  const auto train_cases = load_labeled_cases(args.data);
  std::vector<PhantomCase> val_cases;
  if (!args.val.empty()) val_cases = load_labeled_cases(args.val);

  ToyUNet<float> model =
      build_toy_unet<float>(args.channels, args.depth, policy, {args.patch, args.patch, args.patch}, model_seed);
  const TrainResult result = train_source_model(model, train_cases, val_cases, args.cfg);

  const fs::path out = resolve_out(args.out);
  ensure_dir(out.parent_path().empty() ? fs::path(".") : out.parent_path());
  CheckpointMeta meta;
  meta.seed = args.cfg.seed;
  meta.epochs = args.cfg.epochs;
  meta.val_dsc = result.val_dsc;
  meta.notes = args.norm;
  save_checkpoint(out, model, meta);

  const fs::path dir = out.parent_path().empty() ? fs::path(".") : out.parent_path();
  {
    std::ofstream log(dir / (out.stem().string() + "_train_log.csv"), std::ios::trunc);
    log << "epoch,loss\n";
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) log << e << "," << result.epoch_loss[e] << "\n";
  }
  write_resolved_config(dir, "train-source",
                        json{{"data", args.data},
                             {"val", args.val},
                             {"out", out.string()},
                             {"norm", args.norm},
                             {"channels", args.channels},
                             {"depth", args.depth},
                             {"patch", args.patch},
                             {"epochs", args.cfg.epochs},
                             {"lr", args.cfg.lr},
                             {"momentum", args.cfg.momentum},
                             {"batch", args.cfg.batch},
                             {"steps", args.cfg.steps_per_epoch},
                             {"fg_bias", args.cfg.foreground_bias},
                             {"seed", args.cfg.seed},
                             {"model_seed", model_seed}});
  if (result.val_dsc >= 0.0)
    std::printf("checkpoint %s  val_dsc %.4f\n", out.string().c_str(), result.val_dsc);
  else
    std::printf("checkpoint %s  (no validation set)\n", out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// adapt
// ---------------------------------------------------------------------------

struct AdaptArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string method = "muvi";
  std::string ablate = "none";
  std::string scope = "all";
  std::vector<double> tau;
  std::vector<double> lambda;
  double lr = 1e-3;
  int epochs = 1;
  double momentum = 0.9;
  double overlap = 0.5;
  std::uint64_t seed = 0;
  bool native_only = false;
  double rho = 0.1;
  std::vector<double> alphas;
  double temperature = 1.0;
  int steps = 1;
  bool no_flips = false;
  int workers = 1;
};

Strategy build_strategy(const AdaptArgs& args) {
  Strategy s;
  s.name = parse_method(args.method);

  s.muvi.learning_rate = args.lr;
  s.muvi.epochs = args.epochs;
  s.muvi.momentum = args.momentum;
  s.muvi.overlap = args.overlap;
  s.muvi.seed = args.seed;
  s.muvi.multi_view_inference = !args.native_only;
  if (args.scope == "all")
    s.muvi.scope = ParamScope::all_parameters;
  else if (args.scope == "affine")
    s.muvi.scope = ParamScope::norm_affine_only;
  else
    throw ConfigError("--scope must be all or affine, got " + args.scope);
  if (!args.tau.empty()) {
    if (args.tau.size() != 3) throw ConfigError("--tau needs exactly 3 values");
    for (int v = 0; v < 3; ++v) s.muvi.thresholds.tau[static_cast<std::size_t>(v)] = args.tau[static_cast<std::size_t>(v)];
  }
  if (!args.lambda.empty()) {
    if (args.lambda.size() != 3) throw ConfigError("--lambda needs exactly 3 values");
    s.muvi.weights.lambda1 = args.lambda[0];
    s.muvi.weights.lambda2 = args.lambda[1];
    s.muvi.weights.lambda3 = args.lambda[2];
  }
  if (args.ablate == "no_source_bn")
    s.muvi = ablation_variant(s.muvi, AblationRow::no_source_bn);
  else if (args.ablate == "no_entropy_labels")
    s.muvi = ablation_variant(s.muvi, AblationRow::no_entropy_labels);
  else if (args.ablate == "no_consistency")
    s.muvi = ablation_variant(s.muvi, AblationRow::no_consistency);
  else if (args.ablate != "none")
    throw ConfigError("--ablate must be one of none, no_source_bn, no_entropy_labels, no_consistency");

  s.ptn.overlap = args.overlap;
  s.tent.lr = args.lr;
  s.tent.steps_per_patch = args.steps;
  s.tent.momentum = args.momentum;
  s.tent.overlap = args.overlap;
  s.bnadapt.rho = args.rho;
  if (!args.alphas.empty()) s.intent.alphas = args.alphas;
  s.intent.temperature = args.temperature;
  s.memo.lr = args.lr;
  s.memo.steps = args.steps;
  s.memo.include_flips = !args.no_flips;
  s.muvi.validate();
  return s;
}

int cmd_adapt(const AdaptArgs& args) {
  const Strategy strategy = build_strategy(args);
  auto loaded = load_checkpoint<float>(args.checkpoint);
  const auto cases = scan_cases(args.data);
  std::vector<const CaseFiles*> with_volumes;
  for (const CaseFiles& c : cases)
    if (!c.volume.empty()) with_volumes.push_back(&c);
  if (with_volumes.empty()) throw ConfigError("no volumes found in " + args.data);

  const fs::path out = resolve_out(args.out);
  ensure_dir(out);

  struct CaseOutcome {
    std::string id;
    bool skipped = false;
    std::string skip_reason;
    double wall_time = 0.0;
    std::int64_t accepted = 0;
    std::int64_t foreground = 0;
  };
  std::vector<CaseOutcome> outcomes(with_volumes.size());

  const int workers = std::max(1, std::min<int>(args.workers, static_cast<int>(with_volumes.size())));
  std::atomic<std::size_t> next{0};
  auto worker_loop = [&]() {
    ToyUNet<float> model = loaded.model;  // independent copy per worker
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= with_volumes.size()) break;
      const CaseFiles& files = *with_volumes[i];
      CaseOutcome& o = outcomes[i];
      o.id = files.id;
      const Volume vol = read_volume(files.volume);
      try {
        const AdaptationResultT<float> r = strategy.run(model, vol);
        LabelVolume pred = r.prediction;
        pred.origin = vol.origin;
        write_mask(out / (files.id + "_pred.nii.gz"), pred);
        std::ofstream trace(out / (files.id + "_trace.csv"), std::ios::trunc);
        trace << "step,total,self_learning,consistency,cosine\n";
        for (std::size_t t = 0; t < r.loss_trace.size(); ++t) {
          const LossReport& rep = r.loss_trace[t];
          char line[160];
          std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g\n", t, rep.total, rep.sl,
                        rep.consistency, rep.cosine);
          trace << line;
        }
        o.wall_time = r.wall_time_seconds;
        o.accepted = r.pseudolabel.accepted_count;
        o.foreground = r.pseudolabel.foreground_count;
      } catch (const NormUnsupported& e) {
        o.skipped = true;
        o.skip_reason = e.what();
      }
    }
  };
  if (workers == 1) {
    worker_loop();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker_loop);
    for (auto& t : pool) t.join();
  }

  json case_rows = json::array();
  int skipped = 0;
  double total_wall = 0.0;
  for (const CaseOutcome& o : outcomes) {
    json row{{"case_id", o.id}, {"skipped", o.skipped}};
    if (o.skipped) {
      row["reason"] = o.skip_reason;
      ++skipped;
    } else {
      row["wall_time_seconds"] = o.wall_time;
      row["pseudolabel_accepted"] = o.accepted;
      row["pseudolabel_foreground"] = o.foreground;
      total_wall += o.wall_time;
    }
    case_rows.push_back(row);
  }
  write_json(out / "summary.json", json{{"method", method_name(strategy.name)},
                                        {"checkpoint", args.checkpoint},
                                        {"n_cases", with_volumes.size()},
                                        {"n_skipped", skipped},
                                        {"total_wall_time_seconds", total_wall},
                                        {"cases", case_rows}});
  write_resolved_config(out, "adapt",
                        json{{"checkpoint", args.checkpoint},
                             {"data", args.data},
                             {"out", out.string()},
                             {"method", args.method},
                             {"ablate", args.ablate},
                             {"scope", args.scope},
                             {"lr", args.lr},
                             {"epochs", args.epochs},
                             {"momentum", args.momentum},
                             {"overlap", args.overlap},
                             {"tau",
                              {strategy.muvi.thresholds.tau[0], strategy.muvi.thresholds.tau[1],
                               strategy.muvi.thresholds.tau[2]}},
                             {"lambda",
                              {strategy.muvi.weights.lambda1, strategy.muvi.weights.lambda2,
                               strategy.muvi.weights.lambda3}},
                             {"seed", args.seed},
                             {"native_only", args.native_only},
                             {"rho", args.rho},
                             {"alphas", strategy.intent.alphas},
                             {"temperature", args.temperature},
                             {"steps", args.steps},
                             {"no_flips", args.no_flips},
                             {"workers", args.workers}});
  std::printf("%s: %zu cases, %d skipped, outputs in %s\n", method_name(strategy.name),
              with_volumes.size(), skipped, out.string().c_str());
  if (skipped > 0)
    std::printf("skipped %d case(s): %s\n", skipped,
                outcomes[0].skipped ? outcomes[0].skip_reason.c_str() : "normalization unsupported");
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateArgs {
  std::string pred;
  std::string ref;
  std::string out;
  std::string method;
};

int cmd_evaluate(const EvaluateArgs& args) {
  const auto pred_files = scan_cases(args.pred);
  const auto ref_files = scan_cases(args.ref);
  std::map<std::string, fs::path> preds, refs;
  std::set<std::string> skipped_ids;
  {  // cases the adapt run marked as skipped are excluded from the contract
    const fs::path summary = fs::path(args.pred) / "summary.json";
    if (fs::exists(summary)) {
      const json s = read_json(summary);
      if (s.contains("cases"))
        for (const auto& row : s["cases"])
          if (row.value("skipped", false)) skipped_ids.insert(row["case_id"].get<std::string>());
    }
  }
  for (const CaseFiles& c : pred_files)
    if (!c.prediction.empty()) preds[c.id] = c.prediction;
  for (const CaseFiles& c : ref_files)
    if (!c.mask.empty() && !skipped_ids.count(c.id)) refs[c.id] = c.mask;

  std::vector<std::string> missing_pred, missing_ref;
  for (const auto& [id, p] : refs)
    if (!preds.count(id)) missing_pred.push_back(id);
  for (const auto& [id, p] : preds)
    if (!refs.count(id)) missing_ref.push_back(id);
  if (!missing_pred.empty() || !missing_ref.empty()) {
    std::string msg = "prediction/reference case sets differ.";
    if (!missing_pred.empty()) {
      msg += " missing predictions:";
      for (const auto& id : missing_pred) msg += " " + id;
    }
    if (!missing_ref.empty()) {
      msg += " missing references:";
      for (const auto& id : missing_ref) msg += " " + id;
    }
    throw ConfigError(msg);
  }
  if (preds.empty()) throw ConfigError("no prediction/reference pairs to evaluate");

  std::string method = args.method;
  if (method.empty()) {
    const fs::path summary = fs::path(args.pred) / "summary.json";
    method = fs::exists(summary) ? read_json(summary).value("method", "unknown")
                                 : fs::path(args.pred).filename().string();
  }

  const fs::path out = resolve_out(args.out.empty() ? args.pred : args.out);
  ensure_dir(out);
  std::ofstream csv(out / "metrics.csv", std::ios::trunc);
  csv << "case_id,dsc,hausdorff_mm,asd_mm\n";
  std::vector<double> dscs, hds, asds;
  int undefined = 0;
  for (const auto& [id, pred_path] : preds) {
    const LabelVolume pred = read_mask(pred_path);
    const LabelVolume ref = read_mask(refs[id]);
    const MetricResult m = compute_metrics(pred, ref);
    dscs.push_back(m.dsc);
    char line[160];
    if (m.hausdorff) {
      hds.push_back(*m.hausdorff);
      asds.push_back(*m.asd);
      std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.6f\n", id.c_str(), m.dsc, *m.hausdorff, *m.asd);
    } else {
      ++undefined;
      std::snprintf(line, sizeof line, "%s,%.6f,,\n", id.c_str(), m.dsc);
    }
    csv << line;
  }
  csv.close();

  const AggregateStats dsc_stats = aggregate(dscs);
  const AggregateStats hd_stats = aggregate(hds);
  const AggregateStats asd_stats = aggregate(asds);
  const json summary{{"method", method},
                     {"n", dscs.size()},
                     {"dsc_mean", dsc_stats.mean},
                     {"dsc_std", dsc_stats.stdev},
                     {"hausdorff_mean", hd_stats.mean},
                     {"hausdorff_std", hd_stats.stdev},
                     {"asd_mean", asd_stats.mean},
                     {"asd_std", asd_stats.stdev},
                     {"undefined_distances", undefined}};
  write_json(out / "eval_summary.json", summary);
  write_resolved_config(out, "evaluate",
                        json{{"pred", args.pred}, {"ref", args.ref}, {"out", out.string()}, {"method", method}});

  const std::string table = render_table({{method, summary}});
  std::ofstream(out / "table.txt", std::ios::trunc) << table;
  std::fputs(table.c_str(), stdout);
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> evals;
  std::string out;
};

int cmd_report(const ReportArgs& args) {
  struct Row {
    std::string method;
    json summary;
  };
  std::vector<Row> rows;
  for (const std::string& dir : args.evals) {
    const fs::path summary_path = fs::path(dir) / "eval_summary.json";
    if (!fs::exists(summary_path))
      throw ConfigError("no eval_summary.json under " + dir + " (run `evaluate` first)");
    const json s = read_json(summary_path);
    rows.push_back({s.value("method", dir), s});
  }
  if (rows.empty()) throw ConfigError("report needs at least one evaluation directory");
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.method < b.method; });

  std::vector<std::pair<std::string, json>> table_rows;
  for (const Row& r : rows) table_rows.emplace_back(r.method, r.summary);
  const std::string table = render_table(table_rows);

  if (!args.out.empty()) {
    const fs::path out = resolve_out(args.out);
    ensure_dir(out.parent_path().empty() ? fs::path(".") : out.parent_path());
    std::ofstream(out, std::ios::trunc) << table;
    json resolved{{"evals", args.evals}, {"out", out.string()}};
    write_resolved_config(out.parent_path().empty() ? fs::path(".") : out.parent_path(), "report", resolved);
  }
  std::fputs(table.c_str(), stdout);
  return 0;
}

// ---------------------------------------------------------------------------
// overlay
// ---------------------------------------------------------------------------

struct OverlayArgs {
  std::string volume;
  std::vector<std::string> masks;
  std::string out;
};

int cmd_overlay(const OverlayArgs& args) {
  const Volume vol = read_volume(args.volume);
  std::vector<LabelVolume> masks;
  for (const std::string& m : args.masks) masks.push_back(read_mask(m));
  const Image img = render_overlay(vol, masks);
  const fs::path out = resolve_out(args.out);
  ensure_dir(out.parent_path().empty() ? fs::path(".") : out.parent_path());
  write_png(out, img);
  write_resolved_config(out.parent_path().empty() ? fs::path(".") : out.parent_path(), "overlay",
                        json{{"volume", args.volume}, {"masks", args.masks}, {"out", out.string()}});
  std::printf("wrote %s (%dx%d)\n", out.string().c_str(), img.width, img.height);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"test-time adaptation experiment driver"};
  app.require_subcommand(1);

  GenerateArgs gen;
  TrainArgs train;
  AdaptArgs adapt;
  EvaluateArgs eval;
  ReportArgs report;
  OverlayArgs overlay;
  std::string config_file;

  CLI::App* c_gen = app.add_subcommand("generate-data", "render a phantom dataset with a domain spec");
  c_gen->add_option("--domain", gen.domain_file, "JSON domain spec file")->required();
  c_gen->add_option("--n", gen.n, "number of cases")->required()->check(CLI::PositiveNumber);
  c_gen->add_option("--seed", gen.seed, "base seed (case i uses seed+i)");
  c_gen->add_option("--shape", gen.shape, "volume shape, 3 ints")->expected(3);
  c_gen->add_option("--out", gen.out, "output directory")->required();

  CLI::App* c_train = app.add_subcommand("train-source", "train the source segmentation model");
  c_train->add_option("--data", train.data, "training data directory")->required();
  c_train->add_option("--val", train.val, "validation data directory");
  c_train->add_option("--out", train.out, "checkpoint output path")->required();
  c_train->add_option("--norm", train.norm, "batch_norm or instance_norm");
  c_train->add_option("--channels", train.channels, "base channel width");
  c_train->add_option("--depth", train.depth, "encoder depth");
  c_train->add_option("--patch", train.patch, "cubic patch edge length");
  c_train->add_option("--epochs", train.cfg.epochs, "training epochs");
  c_train->add_option("--lr", train.cfg.lr, "learning rate");
  c_train->add_option("--momentum", train.cfg.momentum, "sgd momentum");
  c_train->add_option("--batch", train.cfg.batch, "patches per optimizer step");
  c_train->add_option("--steps", train.cfg.steps_per_epoch, "optimizer steps per epoch");
  c_train->add_option("--fg-bias", train.cfg.foreground_bias, "fraction of tumor-centered patches");
  c_train->add_option("--seed", train.cfg.seed, "training seed");
  c_train->add_option("--model-seed", train.model_seed, "weight init seed (defaults to --seed)")
      ->each([&](const std::string&) { train.model_seed_set = true; });

  CLI::App* c_adapt = app.add_subcommand("adapt", "run one adaptation method over a test directory");
  c_adapt->add_option("--checkpoint", adapt.checkpoint, "source checkpoint")->required();
  c_adapt->add_option("--data", adapt.data, "test data directory")->required();
  c_adapt->add_option("--out", adapt.out, "output directory")->required();
  c_adapt->add_option("--method", adapt.method, "none|muvi|ptn|tent|bnadapt|intent|memo");
  c_adapt->add_option("--ablate", adapt.ablate, "none|no_source_bn|no_entropy_labels|no_consistency");
  c_adapt->add_option("--scope", adapt.scope, "trainable scope: all or affine");
  c_adapt->add_option("--tau", adapt.tau, "entropy thresholds, 3 values")->expected(3);
  c_adapt->add_option("--lambda", adapt.lambda, "loss weights, 3 values")->expected(3);
  c_adapt->add_option("--lr", adapt.lr, "learning rate (muvi/tent/memo)");
  c_adapt->add_option("--epochs", adapt.epochs, "adaptation epochs (muvi)");
  c_adapt->add_option("--momentum", adapt.momentum, "sgd momentum");
  c_adapt->add_option("--overlap", adapt.overlap, "sliding-window overlap fraction");
  c_adapt->add_option("--seed", adapt.seed, "patch shuffling seed");
  c_adapt->add_flag("--native-only", adapt.native_only, "skip multi-view fusion at inference");
  c_adapt->add_option("--rho", adapt.rho, "statistics interpolation weight (bnadapt)");
  c_adapt->add_option("--alphas", adapt.alphas, "candidate interpolation weights (intent)");
  c_adapt->add_option("--temperature", adapt.temperature, "ensemble softmax temperature (intent)");
  c_adapt->add_option("--steps", adapt.steps, "gradient steps per patch (tent) / total (memo)");
  c_adapt->add_flag("--no-flips", adapt.no_flips, "restrict augmentations to identity (memo)");
  c_adapt->add_option("--workers", adapt.workers, "parallel case workers with independent model copies");

  CLI::App* c_eval = app.add_subcommand("evaluate", "score predictions against reference masks");
  c_eval->add_option("--pred", eval.pred, "directory with *_pred masks")->required();
  c_eval->add_option("--ref", eval.ref, "directory with *_mask references")->required();
  c_eval->add_option("--out", eval.out, "output directory (defaults to --pred)");
  c_eval->add_option("--method", eval.method, "method label (defaults to adapt summary)");

  CLI::App* c_report = app.add_subcommand("report", "aggregate evaluation summaries into one table");
  c_report->add_option("--eval", report.evals, "evaluation directories")->required();
  c_report->add_option("--out", report.out, "table output file");

  CLI::App* c_overlay = app.add_subcommand("overlay", "render central-slice contours of masks on a volume");
  c_overlay->add_option("--volume", overlay.volume, "volume file")->required();
  c_overlay->add_option("--mask", overlay.masks, "mask file (repeatable)");
  c_overlay->add_option("--out", overlay.out, "output PNG path")->required();

  for (CLI::App* cmd : {c_gen, c_train, c_adapt, c_eval, c_report, c_overlay})
    cmd->add_option("--config", config_file, "JSON config file; explicit flags win");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    CLI::App* active = app.get_subcommands().at(0);
    if (!config_file.empty()) apply_config_file(active, config_file);
    if (active == c_gen) return cmd_generate_data(gen);
    if (active == c_train) return cmd_train_source(train);
    if (active == c_adapt) return cmd_adapt(adapt);
    if (active == c_eval) return cmd_evaluate(eval);
    if (active == c_report) return cmd_report(report);
    if (active == c_overlay) return cmd_overlay(overlay);
    std::fprintf(stderr, "error: unknown subcommand\n");
    return 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const DomainError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const ShapeMismatch& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
}
