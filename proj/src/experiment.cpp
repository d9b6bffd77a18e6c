// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtprop/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <set>

#include "mtprop/error.hpp"
#include "mtprop/io.hpp"

namespace mtprop::exp {
namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt_short(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

struct Reader {
  const json& j;
  std::set<std::string> seen;
  template <typename T>
  void get(const char* key, T& out) {
    seen.insert(key);
    if (!j.contains(key)) return;
    try {
      out = j.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(std::string("experiment.") + key + ": " + e.what());
    }
  }
  const json* sub(const char* key) {
    seen.insert(key);
    return j.contains(key) ? &j.at(key) : nullptr;
  }
  void finish(const std::string& ctx) const {
    for (const auto& item : j.items())
      if (!seen.count(item.key())) throw ConfigError(ctx + ": unknown key '" + item.key() + "'");
  }
};

}  // namespace

std::string to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kFraction: return "fraction";
    case SweepAxis::kKlBand: return "kl_band";
    case SweepAxis::kMaskP: return "mask_p";
  }
  return "fraction";
}

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "fraction") return SweepAxis::kFraction;
  if (s == "kl_band") return SweepAxis::kKlBand;
  if (s == "mask_p") return SweepAxis::kMaskP;
  throw ConfigError("unknown sweep axis '" + s + "' (expected fraction|kl_band|mask_p)");
}

void ExperimentConfig::validate() const {
  dataset.validate();
  train.validate();
  kl_sweep_sampler.validate();
  if (num_test >= dataset.num_videos) throw ConfigError("experiment: num_test must be < num_videos");
  if (seeds.empty()) throw ConfigError("experiment: need at least one seed");
  if (modes.empty()) throw ConfigError("experiment: need at least one mode");
  for (double f : label_fractions)
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("experiment: label fractions must be in (0, 1]");
  if (label_fractions.empty()) throw ConfigError("experiment: need at least one label fraction");
  if (axis != SweepAxis::kFraction && axis_values.empty())
    throw ConfigError("experiment: axis '" + to_string(axis) + "' needs axis_values");
  if (axis == SweepAxis::kMaskP)
    for (double p : axis_values)
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("experiment: mask_p values must be in [0, 1]");
  if (axis == SweepAxis::kKlBand)
    for (double v : axis_values)
      if (!(v > 0.0)) throw ConfigError("experiment: kl_band values must be > 0");
  if (eval.an_max < 1) throw ConfigError("experiment: an_max must be >= 1");
}

json to_json(const EvalConfig& c) {
  return {{"proposal", io::to_json(c.proposal)},
          {"an_max", c.an_max},
          {"thresholds", c.thresholds},
          {"map_thresholds", c.map_thresholds}};
}

EvalConfig eval_config_from_json(const json& j) {
  EvalConfig c;
  Reader r{j, {}};
  if (const json* p = r.sub("proposal")) c.proposal = io::proposal_config_from_json(*p);
  r.get("an_max", c.an_max);
  r.get("thresholds", c.thresholds);
  r.get("map_thresholds", c.map_thresholds);
  r.finish("eval");
  return c;
}

json to_json(const ExperimentConfig& c) {
  json modes = json::array();
  for (auto m : c.modes) modes.push_back(mt::to_string(m));
  return {{"dataset", io::to_json(c.dataset)},
          {"data_seed", c.data_seed},
          {"num_test", c.num_test},
          {"train", io::to_json(c.train)},
          {"eval", to_json(c.eval)},
          {"label_fractions", c.label_fractions},
          {"seeds", c.seeds},
          {"modes", modes},
          {"axis", to_string(c.axis)},
          {"axis_values", c.axis_values},
          {"kl_sweep_sampler", io::to_json(c.kl_sweep_sampler)}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  ExperimentConfig c = default_experiment();
  Reader r{j, {}};
  if (const json* d = r.sub("dataset")) c.dataset = io::dataset_config_from_json(*d);
  r.get("data_seed", c.data_seed);
  r.get("num_test", c.num_test);
  if (const json* t = r.sub("train")) c.train = io::train_config_from_json(*t, c.train);
  if (const json* e = r.sub("eval")) c.eval = eval_config_from_json(*e);
  r.get("label_fractions", c.label_fractions);
  r.get("seeds", c.seeds);
  std::vector<std::string> modes;
  r.get("modes", modes);
  if (j.contains("modes")) {
    c.modes.clear();
    for (const auto& m : modes) c.modes.push_back(mt::parse_train_mode(m));
  }
  std::string axis = to_string(c.axis);
  r.get("axis", axis);
  c.axis = parse_sweep_axis(axis);
  r.get("axis_values", c.axis_values);
  if (const json* s = r.sub("kl_sweep_sampler")) c.kl_sweep_sampler = io::sampler_config_from_json(*s);
  r.finish("experiment");
  c.validate();
  return c;
}

Benchmark split_benchmark(const Dataset& full, std::size_t num_test) {
  if (num_test >= full.size()) throw ConfigError("split_benchmark: num_test must be < dataset size");
  Benchmark b{Dataset{full.config, full.seed, {}}, Dataset{full.config, full.seed, {}}};
  const std::size_t n_train = full.size() - num_test;
  b.train.videos.assign(full.videos.begin(), full.videos.begin() + static_cast<long>(n_train));
  b.test.videos.assign(full.videos.begin() + static_cast<long>(n_train), full.videos.end());
  return b;
}

EvalResult evaluate(const mt::Model& model, std::span<const Video> videos, const EvalConfig& config) {
  EvalResult out;
  eval::ProposalLists lists;
  eval::GroundTruthLists gts;
  std::vector<eval::Detection> detections;
  std::vector<eval::GroundTruth> gt_flat;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    auto props = bsn::propose(model.tem, model.pem, videos[v].features, config.proposal);
    std::vector<eval::ScoredSegment> scored;
    for (const auto& p : props) scored.push_back({p.t_start, p.t_end, p.final_score});
    std::vector<eval::Segment> g;
    std::set<int> classes;
    for (const auto& iv : videos[v].annotation.intervals) {
      g.push_back({iv.start, iv.end});
      gt_flat.push_back({v, iv.class_id, iv.start, iv.end});
      classes.insert(iv.class_id);
    }
    for (int cls : classes)
      for (const auto& p : props) detections.push_back({v, cls, p.t_start, p.t_end, p.final_score});
    lists.push_back(std::move(scored));
    gts.push_back(std::move(g));
    out.proposals.push_back(std::move(props));
  }
  const auto curve = eval::ar_curve(lists, gts, config.an_max, config.thresholds);
  for (std::size_t i = 0; i < curve.size(); ++i) out.report.ar_at_an[i + 1] = curve[i];
  out.report.auc = std::accumulate(curve.begin(), curve.end(), 0.0) / static_cast<double>(curve.size());
  for (double th : config.map_thresholds) out.report.map_at_tiou[th] = eval::map_at(detections, gt_flat, th);
  for (std::size_t v = 0; v < videos.size(); ++v)
    out.report.per_video_recall.push_back(
        eval::average_recall({lists[v]}, {gts[v]}, config.an_max, config.thresholds));
  return out;
}

json report_to_json(const eval::EvalReport& report, const EvalConfig& config) {
  json ar = json::object();
  for (const auto& [an, value] : report.ar_at_an) ar[std::to_string(an)] = value;
  json maps = json::object();
  for (const auto& [th, value] : report.map_at_tiou) {
    char key[16];
    std::snprintf(key, sizeof(key), "%.2f", th);
    maps[key] = value;
  }
  return {{"auc", report.auc},
          {"an_max", config.an_max},
          {"tiou_thresholds", config.thresholds},
          {"ar_at_an", ar},
          {"map_at_tiou", maps},
          {"per_video_recall", report.per_video_recall}};
}

std::string ar_curve_csv(const eval::EvalReport& report) {
  std::string out = "an,ar\n";
  for (const auto& [an, value] : report.ar_at_an) out += std::to_string(an) + "," + fmt(value) + "\n";
  return out;
}

KlBand kl_band_around(double value) { return {value / 2.0, value * 5.0}; }

mt::TrainConfig cell_train_config(const ExperimentConfig& config, const CellSpec& cell) {
  mt::TrainConfig t = config.train;
  t.mode = cell.mode;
  switch (cell.axis) {
    case SweepAxis::kFraction: break;
    case SweepAxis::kKlBand:
      t.warp = mt::WarpMode::kMtnd;
      t.warp_config.sampler = config.kl_sweep_sampler;
      t.warp_config.band = kl_band_around(cell.axis_value);
      break;
    case SweepAxis::kMaskP: t.mask_p = cell.axis_value; break;
  }
  return t;
}

CellResult run_cell(const Benchmark& bench, const ExperimentConfig& config, const CellSpec& cell) {
  const auto t0 = std::chrono::steady_clock::now();
  const LabelSplit split = split_labels(bench.train.size(), cell.fraction, cell.seed);
  const mt::TrainConfig train_cfg = cell_train_config(config, cell);
  const mt::TrainResult trained = mt::train(bench.train.videos, split, train_cfg, cell.seed);

  CellResult r;
  r.spec = cell;
  const auto student = evaluate(trained.state.student, bench.test.videos, config.eval);
  const bool semi = cell.mode == mt::TrainMode::kSemi;
  // The supervised baseline has no teacher; its EMA copy is not evaluated.
  const auto teacher = semi ? evaluate(trained.state.teacher, bench.test.videos, config.eval) : student;
  const auto& primary = semi ? teacher : student;
  r.auc = primary.report.auc;
  r.auc_teacher = teacher.report.auc;
  r.auc_student = student.report.auc;
  auto ar_at = [&](std::size_t an) {
    const auto it = primary.report.ar_at_an.find(an);
    return it == primary.report.ar_at_an.end() ? 0.0 : it->second;
  };
  r.ar_at_1 = ar_at(1);
  r.ar_at_10 = ar_at(10);
  r.ar_at_100 = ar_at(100);
  if (auto it = primary.report.map_at_tiou.find(0.5); it != primary.report.map_at_tiou.end()) r.map_at_05 = it->second;

  const std::size_t tail = std::min<std::size_t>(100, trained.history.size());
  double sup = 0.0, cons = 0.0;
  for (std::size_t i = trained.history.size() - tail; i < trained.history.size(); ++i) {
    sup += trained.history[i].supervised_loss;
    cons += trained.history[i].consistency_loss;
  }
  if (tail > 0) {
    r.final_supervised_loss = sup / static_cast<double>(tail);
    r.mean_consistency_loss = cons / static_cast<double>(tail);
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<CellSpec> sweep_cells(const ExperimentConfig& config) {
  std::vector<CellSpec> cells;
  if (config.axis == SweepAxis::kFraction) {
    for (double f : config.label_fractions)
      for (auto mode : config.modes)
        for (auto seed : config.seeds) cells.push_back({SweepAxis::kFraction, f, f, mode, seed});
  } else {
    const double f = config.label_fractions.front();
    for (double v : config.axis_values)
      for (auto mode : config.modes)
        for (auto seed : config.seeds) cells.push_back({config.axis, v, f, mode, seed});
  }
  return cells;
}

std::vector<SweepRow> aggregate(const std::vector<CellResult>& cells) {
  std::map<std::tuple<int, double, int>, std::vector<const CellResult*>> groups;
  std::vector<std::tuple<int, double, int>> order;
  for (const auto& c : cells) {
    const auto key = std::make_tuple(static_cast<int>(c.spec.axis), c.spec.axis_value, static_cast<int>(c.spec.mode));
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&c);
  }
  std::vector<SweepRow> rows;
  for (const auto& key : order) {
    const auto& g = groups[key];
    std::vector<double> auc, ar1, ar10, ar100, at, as;
    for (const auto* c : g) {
      auc.push_back(c->auc);
      ar1.push_back(c->ar_at_1);
      ar10.push_back(c->ar_at_10);
      ar100.push_back(c->ar_at_100);
      at.push_back(c->auc_teacher);
      as.push_back(c->auc_student);
    }
    SweepRow row;
    row.axis = g.front()->spec.axis;
    row.axis_value = g.front()->spec.axis_value;
    row.mode = g.front()->spec.mode;
    row.seeds = g.size();
    row.auc_mean = mean(auc);
    row.auc_std = stddev(auc);
    row.ar1_mean = mean(ar1);
    row.ar10_mean = mean(ar10);
    row.ar100_mean = mean(ar100);
    row.auc_teacher_mean = mean(at);
    row.auc_student_mean = mean(as);
    rows.push_back(row);
  }
  return rows;
}

SweepResult run_sweep(const Benchmark& bench, const ExperimentConfig& config,
                      const std::function<void(const CellResult&)>& on_cell) {
  config.validate();
  SweepResult result;
  for (const auto& cell : sweep_cells(config)) {
    result.cells.push_back(run_cell(bench, config, cell));
    if (on_cell) on_cell(result.cells.back());
  }
  result.rows = aggregate(result.cells);
  return result;
}

std::string sweep_summary_csv(const std::vector<SweepRow>& rows) {
  std::string out =
      "axis,value,mode,seeds,auc_mean,auc_std,ar1_mean,ar10_mean,ar100_mean,auc_teacher_mean,auc_student_mean\n";
  for (const auto& r : rows) {
    out += to_string(r.axis) + "," + fmt(r.axis_value) + "," + mt::to_string(r.mode) + "," +
           std::to_string(r.seeds) + "," + fmt_short(r.auc_mean) + "," + fmt_short(r.auc_std) + "," +
           fmt_short(r.ar1_mean) + "," + fmt_short(r.ar10_mean) + "," + fmt_short(r.ar100_mean) + "," +
           fmt_short(r.auc_teacher_mean) + "," + fmt_short(r.auc_student_mean) + "\n";
  }
  return out;
}

json sweep_detail_json(const SweepResult& result) {
  json cells = json::array();
  for (const auto& c : result.cells) {
    cells.push_back({{"axis", to_string(c.spec.axis)},
                     {"value", c.spec.axis_value},
                     {"fraction", c.spec.fraction},
                     {"mode", mt::to_string(c.spec.mode)},
                     {"seed", c.spec.seed},
                     {"auc", c.auc},
                     {"auc_teacher", c.auc_teacher},
                     {"auc_student", c.auc_student},
                     {"ar_at_1", c.ar_at_1},
                     {"ar_at_10", c.ar_at_10},
                     {"ar_at_100", c.ar_at_100},
                     {"map_at_0.5", c.map_at_05},
                     {"final_supervised_loss", c.final_supervised_loss},
                     {"mean_consistency_loss", c.mean_consistency_loss}});
  }
  json rows = json::array();
  for (const auto& r : result.rows) {
    rows.push_back({{"axis", to_string(r.axis)},
                    {"value", r.axis_value},
                    {"mode", mt::to_string(r.mode)},
                    {"seeds", r.seeds},
                    {"auc_mean", r.auc_mean},
                    {"auc_std", r.auc_std},
                    {"ar1_mean", r.ar1_mean},
                    {"ar10_mean", r.ar10_mean},
                    {"ar100_mean", r.ar100_mean}});
  }
  return {{"cells", cells}, {"summary", rows}};
}

ExperimentConfig default_experiment() {
  ExperimentConfig c;
  c.train.alpha = 0.99;
  return c;
}

}  // namespace mtprop::exp
