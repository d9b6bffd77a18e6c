// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtprop/meanteacher.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mtprop/error.hpp"
#include "mtprop/eval.hpp"
#include "mtprop/rng.hpp"

namespace mtprop::mt {
namespace {

constexpr std::uint64_t kInitStream = 11;
constexpr std::uint64_t kLabeledStream = 12;
constexpr std::uint64_t kUnlabeledStream = 13;
constexpr std::uint64_t kPerturbStream = 14;
constexpr std::uint64_t kPemStream = 15;

std::vector<std::size_t> draw(const std::vector<std::size_t>& pool, std::size_t count, Rng& rng) {
  std::vector<std::size_t> out;
  if (pool.empty() || count == 0) return out;
  if (pool.size() < count) {
    for (std::size_t i = 0; i < count; ++i)
      out.push_back(pool[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(pool.size()) - 1))]);
    return out;
  }
  std::vector<std::size_t> scratch = pool;
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<long>(i), static_cast<long>(scratch.size()) - 1));
    std::swap(scratch[i], scratch[j]);
    out.push_back(scratch[i]);
  }
  return out;
}

struct PemSample {
  bsn::Proposal proposal;
  double target = 0.0;
};

// Balanced PEM training set for one labeled video: positives (tIoU > 0.7),
// mid-range, and negatives (tIoU < 0.3) at no more than 2 per positive.
std::vector<PemSample> pem_samples(const bsn::BoundarySignals& signals,
                                   const std::vector<ActionInterval>& intervals, const TrainConfig& config,
                                   Rng& rng) {
  const double len = static_cast<double>(signals.length());
  std::vector<bsn::Proposal> pool = bsn::generate_candidates(signals, config.candidates);
  for (const auto& iv : intervals) {
    const double d = iv.duration();
    for (std::size_t k = 0; k < config.pem_jitter_copies; ++k) {
      bsn::Proposal p;
      p.t_start = std::clamp(iv.start + rng.uniform(-config.pem_gt_jitter, config.pem_gt_jitter) * d, 0.0, len);
      p.t_end = std::clamp(iv.end + rng.uniform(-config.pem_gt_jitter, config.pem_gt_jitter) * d, 0.0, len);
      if (p.t_end - p.t_start >= 1.0) pool.push_back(p);
    }
  }
  std::vector<PemSample> pos, mid, neg;
  for (const auto& p : pool) {
    const double target = bsn::max_tiou(p, intervals);
    auto& bucket = target > 0.7 ? pos : (target < 0.3 ? neg : mid);
    bucket.push_back({p, target});
  }
  auto take = [&](std::vector<PemSample>& bucket, std::size_t count, std::vector<PemSample>& out) {
    count = std::min(count, bucket.size());
    for (std::size_t i = 0; i < count; ++i) {
      const auto j = static_cast<std::size_t>(rng.uniform_int(static_cast<long>(i), static_cast<long>(bucket.size()) - 1));
      std::swap(bucket[i], bucket[j]);
      out.push_back(bucket[i]);
    }
  };
  std::vector<PemSample> out;
  const std::size_t cap = config.pem_samples_per_bucket;
  take(pos, cap, out);
  const std::size_t n_pos = out.size();
  take(mid, cap, out);
  take(neg, 2 * std::max<std::size_t>(n_pos, 1), out);
  return out;
}

Matrix bsp_matrix(const std::vector<double>& actionness, std::span<const PemSample> samples) {
  Matrix bsp(samples.size(), bsn::kBspLength);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto f = bsn::bsp_features(actionness, samples[i].proposal);
    std::copy(f.begin(), f.end(), bsp.row(i).begin());
  }
  return bsp;
}

void add_scaled(Matrix& acc, const Matrix& g, double scale) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc.data()[i] += scale * g.data()[i];
}

bool finite(double x) { return std::isfinite(x); }

}  // namespace

std::vector<nn::Tensor*> Model::parameters() {
  auto out = tem.parameters();
  for (auto* t : pem.parameters()) out.push_back(t);
  return out;
}

std::vector<const nn::Tensor*> Model::parameters() const {
  auto out = tem.parameters();
  for (const auto* t : pem.parameters()) out.push_back(t);
  return out;
}

std::string to_string(TrainMode mode) { return mode == TrainMode::kSemi ? "semi" : "supervised"; }
std::string to_string(WarpMode mode) { return mode == WarpMode::kMtnd ? "mtnd" : "identity"; }
std::string to_string(EvalModel model) { return model == EvalModel::kTeacher ? "teacher" : "student"; }

TrainMode parse_train_mode(const std::string& s) {
  if (s == "semi") return TrainMode::kSemi;
  if (s == "supervised") return TrainMode::kSupervised;
  throw ConfigError("unknown mode '" + s + "' (expected supervised|semi)");
}

WarpMode parse_warp_mode(const std::string& s) {
  if (s == "mtnd") return WarpMode::kMtnd;
  if (s == "identity") return WarpMode::kIdentity;
  throw ConfigError("unknown warp mode '" + s + "' (expected mtnd|identity)");
}

EvalModel parse_eval_model(const std::string& s) {
  if (s == "teacher") return EvalModel::kTeacher;
  if (s == "student") return EvalModel::kStudent;
  throw ConfigError("unknown model '" + s + "' (expected teacher|student)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("TrainConfig: " + what); };
  if (!(alpha >= 0.0 && alpha < 1.0)) fail("alpha must be in [0, 1)");
  if (!(mask_p >= 0.0 && mask_p <= 1.0)) fail("mask_p must be in [0, 1]");
  if (!(consistency_weight >= 0.0)) fail("consistency_weight must be >= 0");
  if (steps < 0 || ramp_steps < 0) fail("steps and ramp_steps must be >= 0");
  if (!(lr > 0.0) || !(pem_lr > 0.0)) fail("learning rates must be > 0");
  if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  if (tem_hidden == 0 || pem_hidden == 0) fail("hidden widths must be > 0");
  if (labeled_per_batch + (mode == TrainMode::kSemi ? unlabeled_per_batch : 0) == 0) fail("empty batch");
  if (warp_config.band && !(warp_config.band->lo <= warp_config.band->hi)) fail("empty KL band");
  warp_config.sampler.validate();
}

void ema_update(std::span<nn::Tensor* const> teacher, std::span<const nn::Tensor* const> student, double alpha) {
  std::vector<const nn::Tensor*> cteacher(teacher.begin(), teacher.end());
  nn::check_same_shapes(cteacher, student, "ema_update");
  if (!(alpha >= 0.0 && alpha < 1.0)) throw ConfigError("ema_update: alpha must be in [0, 1)");
  const double beta = 1.0 - alpha;
  for (std::size_t k = 0; k < teacher.size(); ++k) {
    auto& t = teacher[k]->values;
    const auto& s = student[k]->values;
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = alpha * t[i] + beta * s[i];
  }
}

void ema_update(Model& teacher, const Model& student, double alpha) {
  ema_update(teacher.parameters(), student.parameters(), alpha);
}

bsn::LossGrad consistency_loss(const bsn::BoundarySignals& student, const Matrix& teacher_warped, double weight) {
  if (!(weight >= 0.0)) throw ConfigError("consistency_loss: weight must be >= 0");
  if (student.values.rows() != teacher_warped.rows() || student.values.cols() != teacher_warped.cols())
    throw ValidationError("consistency_loss: student and teacher signal shapes differ");
  const double n = static_cast<double>(teacher_warped.size());
  bsn::LossGrad out{0.0, Matrix(teacher_warped.rows(), teacher_warped.cols())};
  if (weight == 0.0) return out;
  double sum = 0.0;
  for (std::size_t i = 0; i < teacher_warped.size(); ++i) {
    const double diff = student.values.data()[i] - teacher_warped.data()[i];
    sum += diff * diff;
    out.grad.data()[i] = weight * 2.0 * diff / n;
  }
  out.loss = weight * sum / n;
  return out;
}

double consistency_weight_at(const TrainConfig& config, long step) {
  if (config.mode == TrainMode::kSupervised) return 0.0;
  if (config.ramp_steps <= 0) return config.consistency_weight;
  const double phase = 1.0 - std::min(1.0, static_cast<double>(step) / static_cast<double>(config.ramp_steps));
  return config.consistency_weight * std::exp(-5.0 * phase * phase);
}

TrainerState init_trainer(std::size_t feature_dim, const TrainConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, kInitStream));
  TrainerState state;
  state.student.tem = bsn::TemParams::init(feature_dim, config.tem_hidden, rng);
  state.student.pem = bsn::PemParams::init(config.pem_hidden, rng);
  state.teacher = state.student;
  state.tem_opt = nn::make_adam_state(std::as_const(state.student.tem).parameters());
  state.pem_opt = nn::make_adam_state(std::as_const(state.student.pem).parameters());
  state.seed = seed;
  state.config = config;
  return state;
}

BatchPlan plan_batch(const LabelSplit& split, const TrainConfig& config, std::uint64_t seed, long step) {
  Rng labeled_rng(derive_seed(seed, kLabeledStream, static_cast<std::uint64_t>(step)));
  Rng unlabeled_rng(derive_seed(seed, kUnlabeledStream, static_cast<std::uint64_t>(step)));
  BatchPlan plan;
  plan.labeled = draw(split.labeled, config.labeled_per_batch, labeled_rng);
  if (config.mode == TrainMode::kSemi) plan.unlabeled = draw(split.unlabeled, config.unlabeled_per_batch, unlabeled_rng);
  return plan;
}

StepRecord train_step(TrainerState& state, std::span<const BatchItem> batch, std::vector<VideoTrace>* trace) {
  const TrainConfig& cfg = state.config;
  if (batch.empty()) throw ValidationError("train_step: empty batch");
  const long step = state.step + 1;
  const bool semi = cfg.mode == TrainMode::kSemi;
  const double weight = consistency_weight_at(cfg, step);

  StepRecord rec;
  rec.step = step;
  rec.consistency_weight = weight;
  for (const auto& item : batch) (item.labeled() ? rec.labeled : rec.unlabeled) += 1;

  bsn::TemParams tem_grad = state.student.tem.zeros_like();
  std::uint64_t grid_serial = (static_cast<std::uint64_t>(step) << 20);
  std::size_t masked_rows = 0, total_rows = 0;
  double sup_sum = 0.0, cons_sum = 0.0, kl_sum = 0.0;
  std::size_t kl_count = 0;

  for (std::size_t pos = 0; pos < batch.size(); ++pos) {
    const BatchItem& item = batch[pos];
    const Matrix& features = *item.features;
    const std::size_t T = features.rows();
    Rng rng(derive_seed(derive_seed(state.seed, kPerturbStream, static_cast<std::uint64_t>(step)), pos));

    VideoTrace vt;
    vt.step = step;
    vt.video_index = item.video_index;
    vt.grid_id = ++grid_serial;
    if (semi && cfg.warp == WarpMode::kMtnd) {
      WarpSample ws = sample_warp(T, rng, cfg.warp_config);
      vt.grid = std::move(ws.grid);
      vt.kl = ws.kl;
      vt.kl_in_band = ws.in_band;
      kl_sum += ws.kl;
      ++kl_count;
    } else {
      vt.grid = identity_grid(T);
    }
    const WarpGrid& grid = vt.grid;

    Matrix input = warp(features, grid);
    vt.features_grid_id = vt.grid_id;
    if (semi) {
      MaskResult masked = time_mask(input, cfg.mask_p, rng);
      masked_rows += masked.masked_count();
      vt.mask = std::move(masked.mask);
      input = std::move(masked.values);
      if (cfg.noise_sigma > 0.0) input = gaussian_noise(input, cfg.noise_sigma, rng);
    }
    total_rows += T;

    bsn::TemCache cache;
    const bsn::BoundarySignals student = bsn::tem_forward(state.student.tem, input, &cache);
    Matrix grad(T, 3);
    if (item.labeled()) {
      const Matrix targets = warp(*item.targets, grid);
      vt.targets_grid_id = vt.grid_id;
      const bsn::LossGrad sup = bsn::tem_loss(student, targets);
      sup_sum += sup.loss;
      add_scaled(grad, sup.grad, 1.0 / static_cast<double>(rec.labeled));
    }
    if (semi && weight > 0.0) {
      const bsn::BoundarySignals teacher = bsn::tem_forward(state.teacher.tem, features);
      const Matrix teacher_warped = warp(teacher.values, grid);
      vt.teacher_grid_id = vt.grid_id;
      const bsn::LossGrad cons = consistency_loss(student, teacher_warped, weight);
      cons_sum += cons.loss / weight;
      add_scaled(grad, cons.grad, 1.0 / static_cast<double>(batch.size()));
    }
    bsn::tem_backward(state.student.tem, cache, grad, tem_grad);
    if (trace) trace->push_back(std::move(vt));
  }

  rec.supervised_loss = rec.labeled ? sup_sum / static_cast<double>(rec.labeled) : 0.0;
  rec.consistency_loss = cons_sum / static_cast<double>(batch.size());
  rec.total_loss = rec.supervised_loss + weight * rec.consistency_loss;
  rec.mean_kl = kl_count ? kl_sum / static_cast<double>(kl_count) : 0.0;
  rec.masked_fraction = total_rows ? static_cast<double>(masked_rows) / static_cast<double>(total_rows) : 0.0;
  if (!finite(rec.total_loss)) {
    std::ostringstream msg;
    msg << "train_step: non-finite loss (supervised=" << rec.supervised_loss
        << ", consistency=" << rec.consistency_loss << ", weight=" << weight << ")";
    throw DivergenceError(msg.str(), step);
  }

  // Optimizer step only when a loss term is active.
  const bool tem_active = rec.labeled > 0 || (semi && weight > 0.0);
  if (tem_active) {
    nn::adam_step(state.student.tem.parameters(), std::as_const(tem_grad).parameters(), state.tem_opt,
                  {cfg.lr, 0.9, 0.999, 1e-8});
    rec.student_updated = true;
  }

  // PEM substep on labeled videos, on the student's clean-input signals.
  Rng pem_rng(derive_seed(state.seed, kPemStream, static_cast<std::uint64_t>(step)));
  bsn::PemParams pem_grad = state.student.pem.zeros_like();
  std::size_t pem_rows = 0;
  double pem_sum = 0.0;
  std::vector<std::pair<bsn::PemCache, std::vector<double>>> pem_batches;  // (forward cache, dL/dconf)
  for (const auto& item : batch) {
    const bool consistency_item = semi && cfg.pem_consistency && weight > 0.0;
    if (!item.labeled() && !consistency_item) continue;
    const bsn::BoundarySignals signals = bsn::tem_forward(state.student.tem, *item.features);
    const auto actionness = signals.channel(bsn::kActionness);
    if (item.labeled()) {
      const auto samples = pem_samples(signals, *item.intervals, cfg, pem_rng);
      if (!samples.empty()) {
        bsn::PemCache cache;
        const auto conf = bsn::pem_forward(state.student.pem, bsp_matrix(actionness, samples), &cache);
        std::vector<double> g(conf.size());
        for (std::size_t i = 0; i < conf.size(); ++i) {
          const auto l = bsn::pem_loss(conf[i], samples[i].target);
          pem_sum += l.loss;
          g[i] = l.grad;
        }
        pem_rows += conf.size();
        pem_batches.emplace_back(std::move(cache), std::move(g));
      }
    }
    if (consistency_item) {
      const bsn::BoundarySignals teacher = bsn::tem_forward(state.teacher.tem, *item.features);
      auto cands = bsn::generate_candidates(teacher, cfg.candidates);
      if (cands.size() > 2 * cfg.pem_samples_per_bucket) {
        for (std::size_t i = 0; i < 2 * cfg.pem_samples_per_bucket; ++i) {
          const auto j = static_cast<std::size_t>(pem_rng.uniform_int(static_cast<long>(i), static_cast<long>(cands.size()) - 1));
          std::swap(cands[i], cands[j]);
        }
        cands.resize(2 * cfg.pem_samples_per_bucket);
      }
      if (!cands.empty()) {
        std::vector<PemSample> wrapped;
        for (const auto& c : cands) wrapped.push_back({c, 0.0});
        const auto teacher_conf =
            bsn::pem_forward(state.teacher.pem, bsp_matrix(teacher.channel(bsn::kActionness), wrapped));
        bsn::PemCache cache;
        const auto conf = bsn::pem_forward(state.student.pem, bsp_matrix(actionness, wrapped), &cache);
        std::vector<double> g(conf.size());
        for (std::size_t i = 0; i < conf.size(); ++i) {
          const auto l = bsn::pem_loss(conf[i], teacher_conf[i]);
          pem_sum += weight * l.loss;
          g[i] = weight * l.grad;
        }
        pem_rows += conf.size();
        pem_batches.emplace_back(std::move(cache), std::move(g));
      }
    }
  }
  if (pem_rows > 0) {
    for (auto& [cache, g] : pem_batches) {
      for (auto& v : g) v /= static_cast<double>(pem_rows);
      bsn::pem_backward(state.student.pem, cache, g, pem_grad);
    }
    rec.pem_loss = pem_sum / static_cast<double>(pem_rows);
    if (!finite(rec.pem_loss)) throw DivergenceError("train_step: non-finite PEM loss", step);
    nn::adam_step(state.student.pem.parameters(), std::as_const(pem_grad).parameters(), state.pem_opt,
                  {cfg.pem_lr, 0.9, 0.999, 1e-8});
  }

  const double alpha = cfg.ema_warmup ? std::min(cfg.alpha, 1.0 - 1.0 / static_cast<double>(step + 1)) : cfg.alpha;
  ema_update(state.teacher, state.student, alpha);
  state.step = step;
  return rec;
}

TrainResult train(std::span<const Video> videos, const LabelSplit& split, const TrainConfig& config,
                  std::uint64_t seed, TrainOptions options) {
  config.validate();
  if (videos.empty()) throw ConfigError("train: empty dataset");
  for (auto i : split.labeled)
    if (i >= videos.size()) throw ValidationError("train: split index out of range");
  for (auto i : split.unlabeled)
    if (i >= videos.size()) throw ValidationError("train: split index out of range");
  if (config.mode == TrainMode::kSupervised && split.labeled.empty())
    throw ConfigError("train: supervised mode needs at least one labeled video");
  if (split.labeled.empty() && split.unlabeled.empty()) throw ConfigError("train: empty split");

  TrainResult result;
  if (options.resume) {
    result.state = std::move(*options.resume);
    if (result.state.seed != seed) throw ConfigError("train: resume state was created with a different seed");
    nn::check_same_shapes(std::as_const(result.state.student).parameters(),
                          std::as_const(result.state.teacher).parameters(), "train(resume)");
    result.state.config = config;
  } else {
    result.state = init_trainer(videos.front().features.cols(), config, seed);
  }

  std::vector<Matrix> targets(videos.size());
  for (auto i : split.labeled)
    targets[i] = bsn::targets_matrix(derive_targets(videos[i].annotation, videos[i].length()));

  while (result.state.step < config.steps) {
    const BatchPlan plan = plan_batch(split, config, seed, result.state.step + 1);
    std::vector<BatchItem> batch;
    for (auto i : plan.labeled) batch.push_back({i, &videos[i].features, &targets[i], &videos[i].annotation.intervals});
    for (auto i : plan.unlabeled) batch.push_back({i, &videos[i].features, nullptr, nullptr});
    for (const auto& item : batch) result.accessed.insert(item.video_index);
    const StepRecord rec = train_step(result.state, batch, options.record_trace ? &result.trace : nullptr);
    if (options.on_step) options.on_step(rec);
    result.history.push_back(rec);
  }
  return result;
}

}  // namespace mtprop::mt
