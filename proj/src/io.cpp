// Copyright 2026 The mtprop Authors
// SPDX-License-Identifier: Apache-2.0

#include "mtprop/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "mtprop/error.hpp"

namespace mtprop::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kTensorMagic[8] = {'M', 'T', 'P', 'C', 'K', 'P', 'T', '1'};

// Strict reader: tracks consumed keys so unknown ones can be reported.
class Reader {
 public:
  Reader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(context_ + ": expected a JSON object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(context_ + "." + key + ": " + e.what());
    }
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError(context_ + ": unknown key '" + item.key() + "'");
  }

 private:
  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

struct Fnv {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void add(const void* data, std::size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is, const fs::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw ValidationError("truncated file " + path.string());
  return v;
}

void write_f64(const fs::path& path, const std::vector<double>& values) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ValidationError("cannot write " + path.string());
  os.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(double)));
}

std::vector<double> read_f64(const fs::path& path, std::size_t count) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + path.string());
  std::vector<double> values(count);
  if (!is.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(double))))
    throw ValidationError(path.string() + ": expected " + std::to_string(count) + " float64 values");
  if (is.peek() != std::char_traits<char>::eof()) throw ValidationError(path.string() + ": trailing bytes");
  return values;
}

std::vector<NamedTensor> state_tensors(const mt::TrainerState& state) {
  std::vector<NamedTensor> out;
  const char* tem_names[] = {"conv1.kernel", "conv1.bias", "conv2.kernel", "conv2.bias", "conv3.kernel", "conv3.bias"};
  const char* pem_names[] = {"fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"};
  for (const auto& [prefix, model] : {std::pair{"student", &state.student}, std::pair{"teacher", &state.teacher}}) {
    const auto tem = model->tem.parameters();
    for (std::size_t i = 0; i < tem.size(); ++i) out.push_back({std::string(prefix) + ".tem." + tem_names[i], *tem[i]});
    const auto pem = model->pem.parameters();
    for (std::size_t i = 0; i < pem.size(); ++i) out.push_back({std::string(prefix) + ".pem." + pem_names[i], *pem[i]});
  }
  for (const auto& [prefix, opt] : {std::pair{"adam.tem", &state.tem_opt}, std::pair{"adam.pem", &state.pem_opt}}) {
    for (std::size_t i = 0; i < opt->m.size(); ++i) out.push_back({std::string(prefix) + ".m." + std::to_string(i), opt->m[i]});
    for (std::size_t i = 0; i < opt->v.size(); ++i) out.push_back({std::string(prefix) + ".v." + std::to_string(i), opt->v[i]});
  }
  return out;
}

}  // namespace

std::string fnv1a_hex(const void* data, std::size_t size) {
  Fnv f;
  f.add(data, size);
  return f.hex();
}

std::string hash_json(const json& j) {
  const std::string s = j.dump();
  return fnv1a_hex(s.data(), s.size());
}

std::string dataset_hash(const Dataset& dataset) {
  Fnv f;
  for (const auto& v : dataset.videos) {
    f.add(v.annotation.video_id.data(), v.annotation.video_id.size());
    f.add(v.features.data().data(), v.features.size() * sizeof(double));
    for (const auto& iv : v.annotation.intervals) {
      f.add(&iv.start, sizeof(double));
      f.add(&iv.end, sizeof(double));
      f.add(&iv.class_id, sizeof(int));
    }
  }
  return f.hex();
}

json to_json(const DatasetConfig& c) {
  return {{"num_videos", c.num_videos},
          {"T", c.T},
          {"D", c.D},
          {"num_classes", c.num_classes},
          {"intervals_per_video", {c.min_intervals, c.max_intervals}},
          {"interval_length", {c.min_length, c.max_length}},
          {"min_gap", c.min_gap},
          {"edge_margin", c.edge_margin},
          {"feature_noise_sigma", c.feature_noise_sigma},
          {"feature_noise_correlation", c.feature_noise_correlation},
          {"background_drift_scale", c.background_drift_scale},
          {"prototype_scale", c.prototype_scale},
          {"prototype_control_points", c.prototype_control_points},
          {"drift_control_points", c.drift_control_points}};
}

DatasetConfig dataset_config_from_json(const json& j) {
  DatasetConfig c;
  Reader r(j, "dataset");
  r.get("num_videos", c.num_videos);
  r.get("T", c.T);
  r.get("D", c.D);
  r.get("num_classes", c.num_classes);
  std::vector<int> range{c.min_intervals, c.max_intervals};
  r.get("intervals_per_video", range);
  if (range.size() != 2) throw ConfigError("dataset.intervals_per_video: expected [min, max]");
  c.min_intervals = range[0];
  c.max_intervals = range[1];
  range = {c.min_length, c.max_length};
  r.get("interval_length", range);
  if (range.size() != 2) throw ConfigError("dataset.interval_length: expected [min, max]");
  c.min_length = range[0];
  c.max_length = range[1];
  r.get("min_gap", c.min_gap);
  r.get("edge_margin", c.edge_margin);
  r.get("feature_noise_sigma", c.feature_noise_sigma);
  r.get("feature_noise_correlation", c.feature_noise_correlation);
  r.get("background_drift_scale", c.background_drift_scale);
  r.get("prototype_scale", c.prototype_scale);
  r.get("prototype_control_points", c.prototype_control_points);
  r.get("drift_control_points", c.drift_control_points);
  r.finish();
  return c;
}

json to_json(const SamplerConfig& c) {
  return {{"components", {c.min_components, c.max_components}},
          {"sigma_frac", {c.sigma_min_frac, c.sigma_max_frac}},
          {"jitter", c.jitter}};
}

SamplerConfig sampler_config_from_json(const json& j) {
  SamplerConfig c;
  Reader r(j, "sampler");
  std::vector<int> comps{c.min_components, c.max_components};
  r.get("components", comps);
  std::vector<double> sig{c.sigma_min_frac, c.sigma_max_frac};
  r.get("sigma_frac", sig);
  if (comps.size() != 2 || sig.size() != 2) throw ConfigError("sampler: ranges must be [min, max]");
  c.min_components = comps[0];
  c.max_components = comps[1];
  c.sigma_min_frac = sig[0];
  c.sigma_max_frac = sig[1];
  r.get("jitter", c.jitter);
  r.finish();
  return c;
}

json to_json(const WarpConfig& c) {
  json j{{"sampler", to_json(c.sampler)}, {"max_band_attempts", c.max_band_attempts}, {"kl_bins", c.kl_bins}};
  j["kl_band"] = c.band ? json{c.band->lo, c.band->hi} : json(nullptr);
  return j;
}

WarpConfig warp_config_from_json(const json& j) {
  WarpConfig c;
  Reader r(j, "warp_config");
  if (const json* s = r.sub("sampler")) c.sampler = sampler_config_from_json(*s);
  r.get("max_band_attempts", c.max_band_attempts);
  r.get("kl_bins", c.kl_bins);
  if (const json* b = r.sub("kl_band")) {
    if (b->is_null()) {
      c.band.reset();
    } else {
      const auto v = b->get<std::vector<double>>();
      if (v.size() != 2) throw ConfigError("warp_config.kl_band: expected [lo, hi] or null");
      c.band = KlBand{v[0], v[1]};
    }
  }
  r.finish();
  return c;
}

json to_json(const mt::TrainConfig& c) {
  return {{"mode", mt::to_string(c.mode)},
          {"steps", c.steps},
          {"alpha", c.alpha},
          {"ema_warmup", c.ema_warmup},
          {"mask_p", c.mask_p},
          {"consistency_weight", c.consistency_weight},
          {"ramp_steps", c.ramp_steps},
          {"labeled_per_batch", c.labeled_per_batch},
          {"unlabeled_per_batch", c.unlabeled_per_batch},
          {"lr", c.lr},
          {"pem_lr", c.pem_lr},
          {"warp", mt::to_string(c.warp)},
          {"warp_config", to_json(c.warp_config)},
          {"noise_sigma", c.noise_sigma},
          {"tem_hidden", c.tem_hidden},
          {"pem_hidden", c.pem_hidden},
          {"pem_samples_per_bucket", c.pem_samples_per_bucket},
          {"pem_gt_jitter", c.pem_gt_jitter},
          {"pem_jitter_copies", c.pem_jitter_copies},
          {"pem_consistency", c.pem_consistency},
          {"candidate_threshold_ratio", c.candidates.threshold_ratio},
          {"candidate_max_duration", c.candidates.max_duration}};
}

mt::TrainConfig train_config_from_json(const json& j, const mt::TrainConfig& base) {
  mt::TrainConfig c = base;
  Reader r(j, "train");
  std::string mode = mt::to_string(c.mode), warp = mt::to_string(c.warp);
  r.get("mode", mode);
  c.mode = mt::parse_train_mode(mode);
  r.get("steps", c.steps);
  r.get("alpha", c.alpha);
  r.get("ema_warmup", c.ema_warmup);
  r.get("mask_p", c.mask_p);
  r.get("consistency_weight", c.consistency_weight);
  r.get("ramp_steps", c.ramp_steps);
  r.get("labeled_per_batch", c.labeled_per_batch);
  r.get("unlabeled_per_batch", c.unlabeled_per_batch);
  r.get("lr", c.lr);
  r.get("pem_lr", c.pem_lr);
  r.get("warp", warp);
  c.warp = mt::parse_warp_mode(warp);
  if (const json* w = r.sub("warp_config")) c.warp_config = warp_config_from_json(*w);
  r.get("noise_sigma", c.noise_sigma);
  r.get("tem_hidden", c.tem_hidden);
  r.get("pem_hidden", c.pem_hidden);
  r.get("pem_samples_per_bucket", c.pem_samples_per_bucket);
  r.get("pem_gt_jitter", c.pem_gt_jitter);
  r.get("pem_jitter_copies", c.pem_jitter_copies);
  r.get("pem_consistency", c.pem_consistency);
  r.get("candidate_threshold_ratio", c.candidates.threshold_ratio);
  r.get("candidate_max_duration", c.candidates.max_duration);
  r.finish();
  c.validate();
  return c;
}

json to_json(const bsn::ProposalConfig& c) {
  return {{"candidate_threshold_ratio", c.candidates.threshold_ratio},
          {"candidate_max_duration", c.candidates.max_duration},
          {"nms_sigma", c.nms_sigma},
          {"nms_floor", c.nms_floor},
          {"max_proposals", c.max_proposals}};
}

bsn::ProposalConfig proposal_config_from_json(const json& j) {
  bsn::ProposalConfig c;
  Reader r(j, "proposal");
  r.get("candidate_threshold_ratio", c.candidates.threshold_ratio);
  r.get("candidate_max_duration", c.candidates.max_duration);
  r.get("nms_sigma", c.nms_sigma);
  r.get("nms_floor", c.nms_floor);
  r.get("max_proposals", c.max_proposals);
  r.finish();
  return c;
}

json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ValidationError("cannot write " + path.string());
  os << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  json ids = json::array();
  for (const auto& v : dataset.videos) {
    const auto& id = v.annotation.video_id;
    ids.push_back(id);
    write_f64(dir / (id + ".bin"), v.features.data());
    json intervals = json::array();
    for (const auto& iv : v.annotation.intervals)
      intervals.push_back({{"start", iv.start}, {"end", iv.end}, {"class_id", iv.class_id}});
    const json sidecar{{"video_id", id}, {"T", v.features.rows()}, {"D", v.features.cols()}, {"intervals", intervals}};
    write_text(dir / (id + ".json"), sidecar.dump(2) + "\n");
  }
  const json cfg = to_json(dataset.config);
  const json meta{{"format_version", kDatasetFormatVersion},
                  {"seed", dataset.seed},
                  {"config", cfg},
                  {"config_hash", hash_json(cfg)},
                  {"dataset_hash", dataset_hash(dataset)},
                  {"feature_encoding", "float64 little-endian, row-major T x D"},
                  {"prototype_recipe",
                   {{"kind", "catmull_rom"},
                    {"control_points", dataset.config.prototype_control_points},
                    {"scale", dataset.config.prototype_scale}}},
                  {"videos", ids}};
  write_text(dir / "meta.json", meta.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "meta.json")) throw ConfigError("no dataset at " + dir.string() + " (missing meta.json)");
  const json meta = read_json(dir / "meta.json");
  if (meta.value("format_version", 0) != kDatasetFormatVersion)
    throw ValidationError(dir.string() + ": unsupported dataset format version");
  Dataset ds;
  ds.config = dataset_config_from_json(meta.at("config"));
  ds.seed = meta.at("seed").get<std::uint64_t>();
  for (const auto& id_json : meta.at("videos")) {
    const auto id = id_json.get<std::string>();
    const json side = read_json(dir / (id + ".json"));
    const auto T = side.at("T").get<std::size_t>();
    const auto D = side.at("D").get<std::size_t>();
    Video v{Matrix(T, D, read_f64(dir / (id + ".bin"), T * D)), {id, {}, false}};
    for (const auto& iv : side.at("intervals")) {
      ActionInterval a{iv.at("start").get<double>(), iv.at("end").get<double>(), iv.at("class_id").get<int>()};
      if (!(a.start >= 0.0 && a.end <= static_cast<double>(T) && a.start < a.end))
        throw ValidationError(id + ": interval outside [0, T]");
      v.annotation.intervals.push_back(a);
    }
    ds.videos.push_back(std::move(v));
  }
  if (meta.contains("dataset_hash") && meta.at("dataset_hash").get<std::string>() != dataset_hash(ds))
    throw ValidationError(dir.string() + ": dataset hash mismatch");
  return ds;
}

void write_tensors(const fs::path& path, const std::vector<NamedTensor>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ValidationError("cannot write " + path.string());
  os.write(kTensorMagic, sizeof(kTensorMagic));
  put(os, static_cast<std::uint32_t>(kCheckpointFormatVersion));
  put(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    put(os, static_cast<std::uint32_t>(nt.name.size()));
    os.write(nt.name.data(), static_cast<std::streamsize>(nt.name.size()));
    put(os, static_cast<std::uint32_t>(nt.tensor.shape.size()));
    for (auto d : nt.tensor.shape) put(os, static_cast<std::uint64_t>(d));
    os.write(reinterpret_cast<const char*>(nt.tensor.values.data()),
             static_cast<std::streamsize>(nt.tensor.values.size() * sizeof(double)));
  }
}

std::vector<NamedTensor> read_tensors(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ValidationError("cannot read " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kTensorMagic, 8) != 0)
    throw ValidationError(path.string() + ": not a checkpoint tensor file");
  if (take<std::uint32_t>(is, path) != kCheckpointFormatVersion)
    throw ValidationError(path.string() + ": unsupported checkpoint version");
  const auto count = take<std::uint32_t>(is, path);
  std::vector<NamedTensor> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor nt;
    nt.name.resize(take<std::uint32_t>(is, path));
    if (!is.read(nt.name.data(), static_cast<std::streamsize>(nt.name.size())))
      throw ValidationError("truncated file " + path.string());
    const auto rank = take<std::uint32_t>(is, path);
    std::vector<std::size_t> dims;
    for (std::uint32_t r = 0; r < rank; ++r) dims.push_back(take<std::uint64_t>(is, path));
    nt.tensor = nn::Tensor(dims);
    if (!is.read(reinterpret_cast<char*>(nt.tensor.values.data()),
                 static_cast<std::streamsize>(nt.tensor.values.size() * sizeof(double))))
      throw ValidationError("truncated file " + path.string());
    out.push_back(std::move(nt));
  }
  return out;
}

void save_checkpoint(const mt::TrainerState& state, const fs::path& dir, const json& extra) {
  fs::create_directories(dir);
  const auto tensors = state_tensors(state);
  write_tensors(dir / "checkpoint.bin", tensors);
  json names = json::array();
  for (const auto& nt : tensors) names.push_back({{"name", nt.name}, {"shape", nt.tensor.shape}});
  const std::string bin = read_text(dir / "checkpoint.bin");
  json manifest{{"format_version", kCheckpointFormatVersion},
                {"seed", state.seed},
                {"step", state.step},
                {"tem_optimizer_step", state.tem_opt.step},
                {"pem_optimizer_step", state.pem_opt.step},
                {"topology",
                 {{"feature_dim", state.student.tem.feature_dim()},
                  {"tem_hidden", state.student.tem.hidden()},
                  {"pem_hidden", state.student.pem.hidden()},
                  {"tem", "conv1d(k3,D->H) relu conv1d(k3,H->H) relu conv1d(k1,H->3) sigmoid"},
                  {"pem", "dense(32->H) relu dense(H->1) sigmoid"}}},
                {"train_config", to_json(state.config)},
                {"config_hash", hash_json(to_json(state.config))},
                {"tensors", names},
                {"tensor_file_hash", fnv1a_hex(bin.data(), bin.size())}};
  for (const auto& item : extra.items()) manifest[item.key()] = item.value();
  write_text(dir / "checkpoint.json", manifest.dump(2) + "\n");
}

mt::TrainerState load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "checkpoint.json")) throw ConfigError("no checkpoint at " + dir.string());
  const json manifest = read_json(dir / "checkpoint.json");
  if (manifest.value("format_version", 0) != kCheckpointFormatVersion)
    throw ValidationError(dir.string() + ": unsupported checkpoint version");
  const auto& topo = manifest.at("topology");
  mt::TrainConfig config = train_config_from_json(manifest.at("train_config"));
  mt::TrainerState state = mt::init_trainer(topo.at("feature_dim").get<std::size_t>(), config,
                                            manifest.at("seed").get<std::uint64_t>());
  state.step = manifest.at("step").get<long>();
  state.tem_opt.step = manifest.at("tem_optimizer_step").get<long>();
  state.pem_opt.step = manifest.at("pem_optimizer_step").get<long>();

  auto expected = state_tensors(state);
  const auto loaded = read_tensors(dir / "checkpoint.bin");
  if (loaded.size() != expected.size()) throw ValidationError(dir.string() + ": tensor count mismatch");
  std::vector<nn::Tensor*> targets;
  for (auto& [prefix, model] : {std::pair{"student", &state.student}, std::pair{"teacher", &state.teacher}}) {
    (void)prefix;
    for (auto* t : model->parameters()) targets.push_back(t);
  }
  for (auto* opt : {&state.tem_opt, &state.pem_opt}) {
    for (auto& t : opt->m) targets.push_back(&t);
    for (auto& t : opt->v) targets.push_back(&t);
  }
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    if (loaded[i].name != expected[i].name || loaded[i].tensor.shape != targets[i]->shape)
      throw ValidationError(dir.string() + ": tensor '" + loaded[i].name + "' does not match topology");
    *targets[i] = loaded[i].tensor;
  }
  return state;
}

std::string proposals_jsonl(const std::vector<std::string>& video_ids,
                            const std::vector<std::vector<bsn::Proposal>>& proposals) {
  std::string out;
  for (std::size_t v = 0; v < proposals.size(); ++v) {
    for (const auto& p : proposals[v]) {
      const json rec{{"video_id", video_ids.at(v)},   {"t_start", p.t_start},       {"t_end", p.t_end},
                     {"start_prob", p.start_prob},    {"end_prob", p.end_prob},     {"confidence", p.confidence},
                     {"final_score", p.final_score}};
      out += rec.dump();
      out += '\n';
    }
  }
  return out;
}

void prepare_output_dir(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw ConfigError(dir.string() + " exists and is not a directory");
    if (!fs::is_empty(dir)) {
      if (!force) throw ConfigError(dir.string() + " is not empty (use --force to overwrite)");
      fs::remove_all(dir);
    }
  }
  fs::create_directories(dir);
}

}  // namespace mtprop::io
