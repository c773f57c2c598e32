#include "axmlp/harness.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>

#include "axmlp/errors.hpp"
#include "axmlp/nifti.hpp"
#include "axmlp/rng.hpp"

namespace axmlp::harness {

namespace fs = std::filesystem;

namespace {

constexpr const char* kSelectionNote =
    "Cross-validation metrics use the best checkpoint of each fold as selected on that fold's validation "
    "data; they may be optimistic. Test metrics come from the untouched test split.";

void to_json_schedule(nlohmann::json& j, const optim::TrainSchedule& s) {
  j = {{"epochs", s.epochs},
       {"lr_initial", s.lr_initial},
       {"lr_after", s.lr_after},
       {"decay_epoch", s.decay_epoch},
       {"batch_size", s.batch_size}};
}

optim::TrainSchedule schedule_from_json(const nlohmann::json& j) {
  optim::TrainSchedule s;
  s.epochs = j.value("epochs", s.epochs);
  s.lr_initial = j.value("lr_initial", s.lr_initial);
  s.lr_after = j.value("lr_after", s.lr_after);
  s.decay_epoch = j.value("decay_epoch", s.decay_epoch);
  s.batch_size = j.value("batch_size", s.batch_size);
  return s;
}

data::MaskVolume round_to_float(data::MaskVolume v) {
  for (auto& x : v.data) x = static_cast<double>(static_cast<float>(x));
  return v;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (folds < 2) throw ParameterError("experiment needs at least 2 folds");
  schedule.validate();
  model.validate();
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  nlohmann::json schedule;
  to_json_schedule(schedule, c.schedule);
  j = {{"manifest", c.manifest.string()}, {"model", c.model},   {"schedule", schedule},
       {"augment", c.augment},            {"folds", c.folds},   {"seed", c.seed},
       {"output_dir", c.output_dir.string()}};
  j["crop_margin"] = c.crop_margin ? nlohmann::json(*c.crop_margin) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c.manifest = j.at("manifest").get<std::string>();
  if (j.contains("model")) c.model = j["model"].get<nn::ModelConfig>();
  if (j.contains("schedule")) c.schedule = schedule_from_json(j["schedule"]);
  if (j.contains("augment")) c.augment = j["augment"].get<data::AugmentConfig>();
  c.folds = j.value("folds", c.folds);
  c.seed = j.value("seed", c.seed);
  c.output_dir = j.value("output_dir", c.output_dir.string());
  if (j.contains("crop_margin") && !j["crop_margin"].is_null()) c.crop_margin = j["crop_margin"].get<std::size_t>();
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config " + path.string(), 0);
  ExperimentConfig c;
  try {
    c = nlohmann::json::parse(in).get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("invalid config " + path.string() + ": " + e.what(), 0);
  }
  const auto base = path.parent_path();
  if (c.manifest.is_relative()) c.manifest = base / c.manifest;
  if (c.output_dir.is_relative()) c.output_dir = base / c.output_dir;
  c.validate();
  return c;
}

SampleLoader::SampleLoader(const data::DatasetManifest& manifest, std::optional<data::CropBox> crop)
    : manifest_(manifest), crop_(crop) {}

data::Volume SampleLoader::load_image(const std::string& id) {
  const auto& e = manifest_.find(id);
  accessed_.insert(id);
  auto v = data::read_volume(manifest_.resolve(e.image));
  if (crop_) v = data::apply_crop(v, *crop_);
  return data::z_normalize(v);
}

data::MaskVolume SampleLoader::load_mask(const std::string& id) {
  const auto& e = manifest_.find(id);
  accessed_.insert(id);
  auto m = data::read_volume(manifest_.resolve(e.mask));
  if (crop_) m = data::apply_crop(m, *crop_);
  data::validate_mask(m);
  return m;
}

optim::Sample SampleLoader::load(const std::string& id) { return {id, load_image(id), load_mask(id)}; }

data::DatasetManifest synthesize_dataset(const data::PhantomSpec& spec, std::size_t count, std::uint64_t seed,
                                         const fs::path& out_dir, const std::vector<std::string>& strata) {
  if (count == 0 || strata.empty()) throw ParameterError("synthesize_dataset: need at least one sample and stratum");
  spec.validate();
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "masks");
  data::DatasetManifest manifest;
  manifest.base_dir = out_dir;
  const int width = static_cast<int>(std::to_string(count - 1).size());
  for (std::size_t i = 0; i < count; ++i) {
    std::string id = std::to_string(i);
    id = "ph" + std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(id.size()))), '0') + id;
    const auto& stratum = strata[i % strata.size()];
    auto phantom = data::generate_phantom(spec.for_stratum(stratum), derive_seed(seed, {i}));
    phantom.image.description = "phantom " + id;
    data::write_volume(out_dir / "images" / (id + ".nii"), phantom.image, data::NiftiType::Float32);
    data::write_volume(out_dir / "masks" / (id + ".nii"), phantom.mask, data::NiftiType::UInt8);
    manifest.entries.push_back({id, "images/" + id + ".nii", "masks/" + id + ".nii", stratum, data::Split::Unassigned, std::nullopt});
  }
  data::save_manifest(out_dir / "manifest.json", manifest);
  return manifest;
}

void check_leakage(const data::DatasetManifest& manifest) {
  for (const auto& e : manifest.entries) {
    if (e.split == data::Split::Test && e.fold)
      throw LeakageError("test entry '" + e.id + "' is assigned to fold " + std::to_string(*e.fold));
    if (e.split == data::Split::Train && !e.fold) throw ParameterError("train entry '" + e.id + "' has no fold");
    if (e.fold && *e.fold >= manifest.folds)
      throw ParameterError("entry '" + e.id + "' has fold " + std::to_string(*e.fold) + " outside 0.." +
                           std::to_string(manifest.folds));
  }
}

data::CropBox training_crop_box(const data::DatasetManifest& manifest, std::size_t margin, SampleLoader* audit) {
  SampleLoader local(manifest, std::nullopt);
  SampleLoader& loader = audit ? *audit : local;
  std::vector<data::MaskVolume> masks;
  for (const auto* e : manifest.with_split(data::Split::Train)) masks.push_back(loader.load_mask(e->id));
  return data::crop_bbox(masks, margin);
}

namespace {

FoldResult train_fold_unchecked(const ExperimentConfig& config, const data::DatasetManifest& manifest,
                                std::size_t k, SampleLoader& loader, const nn::ModelConfig& model_config) {
  std::vector<optim::Sample> train_set, val_set;
  FoldResult fr;
  fr.fold = k;
  for (const auto* e : manifest.with_split(data::Split::Train)) {
    if (*e->fold == k) {
      val_set.push_back(loader.load(e->id));
      fr.validation_ids.push_back(e->id);
    } else {
      train_set.push_back(loader.load(e->id));
    }
  }
  fs::create_directories(config.output_dir / "checkpoints");
  fs::create_directories(config.output_dir / "logs");
  std::ofstream log(config.output_dir / "logs" / ("fold_" + std::to_string(k) + ".log"), std::ios::trunc);

  nn::AxialMLPModel model(model_config, derive_seed(config.seed, {0x1u, k}));
  optim::TrainOptions options;
  options.seed = derive_seed(config.seed, {0x2u, k});
  options.log = &log;
  fr.training = optim::train(model, train_set, val_set, config.schedule, config.augment, options);
  fr.training.best.meta["fold"] = k;
  fr.checkpoint_path = config.output_dir / "checkpoints" / ("fold_" + std::to_string(k) + ".ckpt");
  nn::save_checkpoint(fr.checkpoint_path, fr.training.best);
  return fr;
}

}  // namespace

FoldResult train_fold(const ExperimentConfig& config, const data::DatasetManifest& manifest, std::size_t k,
                      SampleLoader& loader, const nn::ModelConfig& model_config) {
  if (k >= manifest.folds) throw ParameterError("fold " + std::to_string(k) + " does not exist");
  try {
    return train_fold_unchecked(config, manifest, k, loader, model_config);
  } catch (const NumericalError& e) {
    throw NumericalError("fold " + std::to_string(k) + " failed: " + e.what());
  }
}

CVResult run_cv(const ExperimentConfig& config) {
  config.validate();
  const auto manifest = data::load_manifest(config.manifest);
  check_leakage(manifest);
  if (manifest.folds != config.folds)
    throw ParameterError("manifest has " + std::to_string(manifest.folds) + " folds, config expects " +
                         std::to_string(config.folds));

  CVResult result;
  result.model = config.model;
  SampleLoader audit(manifest, std::nullopt);
  if (config.crop_margin) {
    result.crop = training_crop_box(manifest, *config.crop_margin, &audit);
    result.model.crop_shape = result.crop->size();
    fs::create_directories(config.output_dir);
    std::ofstream(config.output_dir / "crop.json") << nlohmann::json(*result.crop).dump(2) << '\n';
  }
  SampleLoader loader(manifest, result.crop);

  const auto pred_dir = config.output_dir / "predictions" / "val";
  fs::create_directories(pred_dir);
  std::vector<metrics::SampleMetrics> rows;
  for (std::size_t k = 0; k < config.folds; ++k) {
    auto fr = train_fold(config, manifest, k, loader, result.model);
    const auto model = fr.training.best.instantiate();
    for (const auto& id : fr.validation_ids) {
      const auto sample = loader.load(id);
      auto pred = round_to_float(optim::predict(model, sample.image));
      pred.description = "fold=" + std::to_string(k);
      data::write_volume(pred_dir / (id + ".nii"), pred, data::NiftiType::Float32);
      rows.push_back(metrics::evaluate_sample(id, pred.data, sample.mask.data));
      result.prediction_fold[id] = k;
    }
    result.folds.push_back(std::move(fr));
  }
  result.validation = metrics::aggregate(std::move(rows));
  result.validation.note = kSelectionNote;
  result.accessed_ids = loader.accessed();
  result.accessed_ids.insert(audit.accessed().begin(), audit.accessed().end());
  std::ofstream(config.output_dir / "cv_report.json") << metrics::to_json(result.validation).dump(2) << '\n';
  return result;
}

data::MaskVolume ensemble_predict(const std::vector<nn::AxialMLPModel>& members, const data::Volume& image) {
  if (members.empty()) throw ParameterError("ensemble_predict: no members");
  for (const auto& m : members)
    if (!(m.config() == members.front().config()))
      throw ParameterError("ensemble_predict: member configurations differ");
  data::MaskVolume acc(image.shape, 0.0, image.voxel_size);
  for (const auto& m : members) {
    const auto p = optim::predict(m, image);
    for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += p.data[i];
  }
  const double inv = 1.0 / static_cast<double>(members.size());
  for (auto& v : acc.data) v *= inv;
  return acc;
}

data::MaskVolume ensemble_predict(const std::vector<nn::Checkpoint>& checkpoints, const data::Volume& image) {
  if (checkpoints.empty()) throw ParameterError("ensemble_predict: no checkpoints");
  std::vector<nn::AxialMLPModel> members;
  for (const auto& c : checkpoints) {
    if (!(c.config == checkpoints.front().config))
      throw ParameterError("ensemble_predict: checkpoint configurations differ");
    members.push_back(c.instantiate());
  }
  return ensemble_predict(members, image);
}

metrics::MetricsReport evaluate_test(const CVResult& result, const ExperimentConfig& config) {
  const auto manifest = data::load_manifest(config.manifest);
  check_leakage(manifest);
  const auto test = manifest.with_split(data::Split::Test);
  if (test.empty()) throw ParameterError("evaluate_test: manifest has no test entries");
  for (const auto* e : test)
    if (result.prediction_fold.count(e->id))
      throw LeakageError("test entry '" + e->id + "' was predicted during cross-validation");

  std::vector<nn::AxialMLPModel> members;
  for (const auto& f : result.folds) members.push_back(f.training.best.instantiate());
  SampleLoader loader(manifest, result.crop);
  const auto pred_dir = config.output_dir / "predictions" / "test";
  fs::create_directories(pred_dir);
  std::vector<metrics::SampleMetrics> rows;
  for (const auto* e : test) {
    const auto sample = loader.load(e->id);
    auto pred = round_to_float(ensemble_predict(members, sample.image));
    pred.description = "ensemble folds=" + std::to_string(members.size());
    data::write_volume(pred_dir / (e->id + ".nii"), pred, data::NiftiType::Float32);
    rows.push_back(metrics::evaluate_sample(e->id, pred.data, sample.mask.data));
  }
  auto report = metrics::aggregate(std::move(rows));
  report.note = kSelectionNote;
  std::ofstream(config.output_dir / "test_report.json") << metrics::to_json(report).dump(2) << '\n';
  return report;
}

metrics::MetricsReport evaluate_predictions(const fs::path& pred_dir, const data::DatasetManifest& manifest,
                                            data::Split split, std::optional<data::CropBox> crop) {
  SampleLoader loader(manifest, crop);
  std::vector<metrics::SampleMetrics> rows;
  for (const auto* e : manifest.with_split(split)) {
    const auto pred = data::read_volume(pred_dir / (e->id + ".nii"));
    const auto mask = loader.load_mask(e->id);
    if (pred.shape != mask.shape) throw DimensionError("prediction for '" + e->id + "' has the wrong shape");
    rows.push_back(metrics::evaluate_sample(e->id, pred.data, mask.data));
  }
  if (rows.empty()) throw ParameterError("no entries in split '" + data::to_string(split) + "'");
  return metrics::aggregate(std::move(rows));
}

BenchmarkResult benchmark(const nn::ModelConfig& config, std::size_t iterations, std::size_t batch_size,
                          std::size_t warmup, std::uint64_t seed) {
  config.validate();
  if (iterations == 0 || batch_size == 0) throw ParameterError("benchmark: iterations and batch size must be positive");
  nn::AxialMLPModel model(config, seed);
  const auto params = model.parameters();
  optim::AdamState adam;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto& crop = config.crop_shape;
  const std::size_t voxels = crop[0] * crop[1] * crop[2] * config.in_channels;
  std::vector<std::vector<double>> inputs(batch_size, std::vector<double>(voxels));
  std::vector<std::vector<double>> targets(batch_size, std::vector<double>(voxels / config.in_channels));
  for (auto& v : inputs)
    for (auto& x : v) x = gauss(rng);
  for (auto& v : targets)
    for (auto& x : v) x = gauss(rng) > 1.0 ? 1.0 : 0.0;

  BenchmarkResult out;
  out.params = model.parameter_count();
  const auto baseline = memory_stats().live_bytes;
  reset_peak_memory();
  for (std::size_t it = 0; it < warmup + iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    model.zero_grad();
    for (std::size_t b = 0; b < batch_size; ++b) {
      Tape tape;
      const Tensor x = Tensor::from({1, crop[0], crop[1], crop[2], config.in_channels}, inputs[b]);
      const Tensor pred = model.forward(&tape, x, ops::Mode::Train, rng);
      const Tensor target = Tensor::from(pred.shape(), targets[b]);
      const Tensor loss = ops::soft_dice_loss(&tape, pred, target, 1.0);
      tape.backward(ops::scale(&tape, loss, 1.0 / static_cast<double>(batch_size)), {.retain_intermediate = false});
    }
    optim::adam_step(params, adam, 1e-3);
    const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (it >= warmup) out.step_times.push_back(dt);
  }
  auto sorted = out.step_times;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  out.step_time_seconds = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  const auto peak = memory_stats().peak_bytes;
  out.peak_memory_bytes = peak > baseline ? peak - baseline : 0;
  return out;
}

}  // namespace axmlp::harness
