// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtprop/commands.hpp"

#include <algorithm>
#include <cstdio>

#include "mtprop/error.hpp"
#include "mtprop/io.hpp"

namespace mtprop::cli {
namespace {

constexpr const char* kManifest = "manifest.json";

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string file_hash(const fs::path& path) {
  const std::string bytes = io::read_text(path);
  return io::fnv1a_hex(bytes.data(), bytes.size());
}

/// Hashes of every regular file under `dir` except the manifest, keyed by
/// relative path in sorted order.
json output_hashes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file()) files.push_back(fs::relative(entry.path(), dir));
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& f : files)
    if (f != kManifest) out[f.generic_string()] = file_hash(dir / f);
  return out;
}

json base_manifest(const std::string& command, const exp::ExperimentConfig& cfg, const json& args) {
  const json c = exp::to_json(cfg);
  return {{"tool", "mtprop"},
          {"version", MTPROP_VERSION},
          {"command", command},
          {"args", args},
          {"config", c},
          {"config_hash", io::hash_json(c)}};
}

void finish_manifest(json manifest, const fs::path& out) {
  manifest["outputs"] = output_hashes(out);
  io::write_text(out / kManifest, manifest.dump(2) + "\n");
}

std::string absolute_path(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

Dataset require_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "meta.json")) throw ConfigError("no dataset at " + dir.string());
  return io::load_dataset(dir);
}

void check_dims(const mt::TrainerState& state, const Dataset& data) {
  const std::size_t d = state.student.tem.feature_dim();
  if (d != data.config.D)
    throw ValidationError("checkpoint expects D=" + std::to_string(d) + " but dataset has D=" +
                          std::to_string(data.config.D));
}

std::string history_csv(const std::vector<mt::StepRecord>& history) {
  std::string out =
      "step,supervised_loss,consistency_loss,consistency_weight,total_loss,pem_loss,mean_kl,masked_fraction,"
      "labeled,unlabeled,student_updated\n";
  for (const auto& r : history) {
    out += std::to_string(r.step) + "," + fmt(r.supervised_loss) + "," + fmt(r.consistency_loss) + "," +
           fmt(r.consistency_weight) + "," + fmt(r.total_loss) + "," + fmt(r.pem_loss) + "," + fmt(r.mean_kl) + "," +
           fmt(r.masked_fraction) + "," + std::to_string(r.labeled) + "," + std::to_string(r.unlabeled) + "," +
           (r.student_updated ? "1" : "0") + "\n";
  }
  return out;
}

std::string trace_jsonl(const std::vector<mt::VideoTrace>& trace) {
  std::string out;
  for (const auto& t : trace) {
    std::size_t masked = 0;
    for (bool m : t.mask) masked += m ? 1 : 0;
    json rec{{"step", t.step},
             {"video_index", t.video_index},
             {"kl", t.kl},
             {"kl_in_band", t.kl_in_band},
             {"masked", masked},
             {"grid_id", t.grid_id},
             {"features_grid_id", t.features_grid_id},
             {"targets_grid_id", t.targets_grid_id ? json(*t.targets_grid_id) : json(nullptr)},
             {"teacher_grid_id", t.teacher_grid_id ? json(*t.teacher_grid_id) : json(nullptr)}};
    out += rec.dump();
    out += '\n';
  }
  return out;
}

// ---- command bodies (config already resolved) -------------------------------

void run_gen_data(const exp::ExperimentConfig& cfg, std::uint64_t seed, const fs::path& out, bool force,
                  std::ostream& log) {
  io::prepare_output_dir(out, force);
  const Dataset data = generate_dataset(cfg.dataset, seed);
  io::save_dataset(data, out);
  json m = base_manifest("gen-data", cfg, {{"seed", seed}});
  m["seed"] = seed;
  m["dataset_hash"] = io::dataset_hash(data);
  finish_manifest(std::move(m), out);
  log << "wrote " << data.size() << " videos to " << out.string() << "\n";
}

struct ResolvedTrain {
  std::string dataset;
  std::uint64_t seed = 0;
  mt::TrainMode mode = mt::TrainMode::kSemi;
  double fraction = 1.0;
  long steps = 0;
  std::optional<std::string> resume;
  bool trace = false;
};

void run_train(const exp::ExperimentConfig& cfg, const ResolvedTrain& a, const fs::path& out, bool force,
               std::ostream& log) {
  const Dataset data = require_dataset(a.dataset);
  if (cfg.num_test >= data.size()) throw ConfigError("train: num_test must be smaller than the dataset");
  std::optional<mt::TrainerState> resume;
  std::string resume_hash;
  if (a.resume) {
    resume = io::load_checkpoint(*a.resume);
    check_dims(*resume, data);
    resume_hash = file_hash(fs::path(*a.resume) / "checkpoint.bin");
  }
  io::prepare_output_dir(out, force);

  const exp::Benchmark bench = exp::split_benchmark(data, cfg.num_test);
  const LabelSplit split = split_labels(bench.train.size(), a.fraction, a.seed);
  mt::TrainConfig tc = cfg.train;
  tc.mode = a.mode;
  tc.steps = a.steps;

  mt::TrainOptions opts;
  opts.resume = std::move(resume);
  opts.record_trace = a.trace;
  const long report_every = std::max<long>(1, a.steps / 10);
  opts.on_step = [&](const mt::StepRecord& r) {
    if (r.step % report_every == 0 || r.step == a.steps)
      log << "step " << r.step << "/" << a.steps << " sup " << r.supervised_loss << " cons " << r.consistency_loss
          << " pem " << r.pem_loss << "\n";
  };
  const mt::TrainResult result = mt::train(bench.train.videos, split, tc, a.seed, std::move(opts));

  io::write_text(out / "history.csv", history_csv(result.history));
  io::write_text(out / "split.json", json{{"labeled", split.labeled}, {"unlabeled", split.unlabeled}}.dump() + "\n");
  if (a.trace) io::write_text(out / "trace.jsonl", trace_jsonl(result.trace));
  std::vector<std::size_t> accessed(result.accessed.begin(), result.accessed.end());
  io::write_text(out / "accessed.json", json(accessed).dump() + "\n");
  io::save_checkpoint(result.state, out / "checkpoint",
                      {{"dataset_hash", io::dataset_hash(data)}, {"label_fraction", a.fraction}});

  json args{{"dataset", a.dataset},    {"seed", a.seed},   {"mode", mt::to_string(a.mode)},
            {"fraction", a.fraction},  {"steps", a.steps}, {"trace", a.trace},
            {"resume", a.resume ? json(*a.resume) : json(nullptr)}};
  json m = base_manifest("train", cfg, args);
  m["seed"] = a.seed;
  m["dataset_hash"] = io::dataset_hash(data);
  if (a.resume) m["resume_checkpoint_hash"] = resume_hash;
  m["final_step"] = result.state.step;
  finish_manifest(std::move(m), out);
  log << "trained " << mt::to_string(a.mode) << " to step " << result.state.step << "; checkpoint in "
      << (out / "checkpoint").string() << "\n";
}

struct ResolvedEval {
  std::string checkpoint;
  std::string dataset;
  mt::EvalModel model = mt::EvalModel::kTeacher;
  std::string split = "test";
};

void run_eval(const exp::ExperimentConfig& cfg, const ResolvedEval& a, const fs::path& out, bool force,
              std::ostream& log) {
  const Dataset data = require_dataset(a.dataset);
  const mt::TrainerState state = io::load_checkpoint(a.checkpoint);
  check_dims(state, data);
  std::vector<Video> videos;
  if (a.split == "all") {
    videos = data.videos;
  } else if (a.split == "test" || a.split == "train") {
    const exp::Benchmark bench = exp::split_benchmark(data, cfg.num_test);
    videos = a.split == "test" ? bench.test.videos : bench.train.videos;
  } else {
    throw ConfigError("eval: split must be test, train or all");
  }
  io::prepare_output_dir(out, force);

  const mt::Model& model = a.model == mt::EvalModel::kTeacher ? state.teacher : state.student;
  const exp::EvalResult result = exp::evaluate(model, videos, cfg.eval);
  std::vector<std::string> ids;
  for (const auto& v : videos) ids.push_back(v.annotation.video_id);
  io::write_text(out / "proposals.jsonl", io::proposals_jsonl(ids, result.proposals));
  json report = exp::report_to_json(result.report, cfg.eval);
  report["model"] = mt::to_string(a.model);
  report["split"] = a.split;
  report["num_videos"] = videos.size();
  report["video_ids"] = ids;
  report["checkpoint_hash"] = file_hash(fs::path(a.checkpoint) / "checkpoint.bin");
  report["dataset_hash"] = io::dataset_hash(data);
  report["seed"] = state.seed;
  report["config_hash"] = io::hash_json(exp::to_json(cfg));
  io::write_text(out / "report.json", report.dump(2) + "\n");
  io::write_text(out / "ar_an.csv", exp::ar_curve_csv(result.report));

  json args{{"checkpoint", a.checkpoint}, {"dataset", a.dataset}, {"model", mt::to_string(a.model)}, {"split", a.split}};
  json m = base_manifest("eval", cfg, args);
  m["seed"] = state.seed;
  m["dataset_hash"] = report["dataset_hash"];
  m["checkpoint_hash"] = report["checkpoint_hash"];
  finish_manifest(std::move(m), out);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", result.report.auc);
  log << "AUC " << buf << " over " << videos.size() << " videos (" << mt::to_string(a.model) << ")\n";
}

void run_sweep(const exp::ExperimentConfig& cfg, const std::optional<std::string>& dataset, const fs::path& out,
               bool force, std::ostream& log) {
  const Dataset data = dataset ? require_dataset(*dataset) : generate_dataset(cfg.dataset, cfg.data_seed);
  io::prepare_output_dir(out, force);
  const exp::Benchmark bench = exp::split_benchmark(data, cfg.num_test);
  const std::size_t total = exp::sweep_cells(cfg).size();
  std::size_t done = 0;
  const exp::SweepResult result = exp::run_sweep(bench, cfg, [&](const exp::CellResult& c) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "[%zu/%zu] %s=%g %s seed %llu: AUC %.4f (%.1fs)\n", ++done, total,
                  exp::to_string(c.spec.axis).c_str(), c.spec.axis_value, mt::to_string(c.spec.mode).c_str(),
                  static_cast<unsigned long long>(c.spec.seed), c.auc, c.seconds);
    log << buf << std::flush;
  });
  io::write_text(out / "sweep_summary.csv", exp::sweep_summary_csv(result.rows));
  io::write_text(out / "sweep_detail.json", exp::sweep_detail_json(result).dump(2) + "\n");

  json m = base_manifest("sweep", cfg, {{"dataset", dataset ? json(*dataset) : json(nullptr)}});
  m["dataset_hash"] = io::dataset_hash(data);
  m["seeds"] = cfg.seeds;
  finish_manifest(std::move(m), out);
  log << exp::sweep_summary_csv(result.rows);
}

}  // namespace

exp::ExperimentConfig load_config(const std::optional<fs::path>& path) {
  if (!path) return exp::default_experiment();
  if (!fs::exists(*path)) throw ConfigError("config file not found: " + path->string());
  json j;
  try {
    j = io::read_json(*path);
  } catch (const json::exception& e) {
    throw ConfigError("cannot parse " + path->string() + ": " + e.what());
  }
  if (j.is_object() && j.contains("command") && j.contains("config")) return exp::experiment_config_from_json(j["config"]);
  return exp::experiment_config_from_json(j);
}

void gen_data(const GenDataArgs& args, std::ostream& log) {
  const exp::ExperimentConfig cfg = load_config(args.config);
  run_gen_data(cfg, args.seed.value_or(cfg.data_seed), args.out, args.force, log);
}

void train(const TrainArgs& args, std::ostream& log) {
  const exp::ExperimentConfig cfg = load_config(args.config);
  ResolvedTrain a;
  a.dataset = absolute_path(args.dataset);
  a.seed = args.seed.value_or(cfg.seeds.front());
  a.mode = args.mode.value_or(cfg.train.mode);
  a.fraction = args.fraction.value_or(cfg.label_fractions.front());
  if (!(a.fraction > 0.0 && a.fraction <= 1.0)) throw ConfigError("--fraction must be in (0, 1]");
  a.steps = args.steps.value_or(cfg.train.steps);
  if (a.steps < 0) throw ConfigError("--steps must be >= 0");
  if (args.resume) a.resume = absolute_path(*args.resume);
  a.trace = args.trace;
  run_train(cfg, a, args.out, args.force, log);
}

void evaluate(const EvalArgs& args, std::ostream& log) {
  const exp::ExperimentConfig cfg = load_config(args.config);
  run_eval(cfg, {absolute_path(args.checkpoint), absolute_path(args.dataset), args.model, args.split}, args.out, args.force, log);
}

void sweep(const SweepArgs& args, std::ostream& log) {
  const exp::ExperimentConfig cfg = load_config(args.config);
  std::optional<std::string> dataset;
  if (args.dataset) dataset = absolute_path(*args.dataset);
  run_sweep(cfg, dataset, args.out, args.force, log);
}

void replay(const fs::path& manifest_path, const fs::path& out, bool force, std::ostream& log) {
  if (!fs::exists(manifest_path)) throw ConfigError("manifest not found: " + manifest_path.string());
  const json m = io::read_json(manifest_path);
  if (!m.contains("command") || !m.contains("config") || !m.contains("args"))
    throw ConfigError(manifest_path.string() + " is not a manifest");
  const exp::ExperimentConfig cfg = exp::experiment_config_from_json(m.at("config"));
  const json& args = m.at("args");
  const std::string command = m.at("command").get<std::string>();
  try {
    if (command == "gen-data") {
      run_gen_data(cfg, args.at("seed").get<std::uint64_t>(), out, force, log);
    } else if (command == "train") {
      ResolvedTrain a;
      a.dataset = args.at("dataset").get<std::string>();
      a.seed = args.at("seed").get<std::uint64_t>();
      a.mode = mt::parse_train_mode(args.at("mode").get<std::string>());
      a.fraction = args.at("fraction").get<double>();
      a.steps = args.at("steps").get<long>();
      a.trace = args.at("trace").get<bool>();
      if (!args.at("resume").is_null()) a.resume = args.at("resume").get<std::string>();
      run_train(cfg, a, out, force, log);
    } else if (command == "eval") {
      run_eval(cfg,
               {args.at("checkpoint").get<std::string>(), args.at("dataset").get<std::string>(),
                mt::parse_eval_model(args.at("model").get<std::string>()), args.at("split").get<std::string>()},
               out, force, log);
    } else if (command == "sweep") {
      std::optional<std::string> dataset;
      if (!args.at("dataset").is_null()) dataset = args.at("dataset").get<std::string>();
      run_sweep(cfg, dataset, out, force, log);
    } else {
      throw ConfigError("unknown command '" + command + "' in manifest");
    }
  } catch (const json::exception& e) {
    throw ConfigError("malformed manifest args: " + std::string(e.what()));
  }

  const json expected = m.value("outputs", json::object());
  const json actual = io::read_json(out / kManifest).value("outputs", json::object());
  std::size_t differ = 0;
  for (const auto& [name, hash] : expected.items()) {
    if (!actual.contains(name) || actual[name] != hash) {
      log << "differs: " << name << "\n";
      ++differ;
    }
  }
  if (differ > 0 || actual.size() != expected.size())
    throw ValidationError("replay of " + manifest_path.string() + " did not reproduce " + std::to_string(differ) +
                          " output(s)");
  log << "reproduced " << expected.size() << " output(s) bitwise\n";
}

}  // namespace mtprop::cli
