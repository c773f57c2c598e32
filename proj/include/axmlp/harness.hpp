#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "axmlp/augment.hpp"
#include "axmlp/checkpoint.hpp"
#include "axmlp/manifest.hpp"
#include "axmlp/metrics.hpp"
#include "axmlp/optim.hpp"
#include "axmlp/phantom.hpp"
#include "axmlp/preprocess.hpp"
#include "axmlp/train.hpp"

namespace axmlp::harness {

struct ExperimentConfig {
  std::filesystem::path manifest;
  nn::ModelConfig model;
  optim::TrainSchedule schedule;
  data::AugmentConfig augment;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "experiment";
  /// When set, images are cropped to the union box of all training masks grown
  /// by this margin, and model.crop_shape is taken from that box.
  std::optional<std::size_t> crop_margin;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
/// Relative paths in the file resolve against the file's directory.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Loads and preprocesses manifest entries, recording every id it touches.
class SampleLoader {
 public:
  SampleLoader(const data::DatasetManifest& manifest, std::optional<data::CropBox> crop);

  optim::Sample load(const std::string& id);
  data::Volume load_image(const std::string& id);
  data::MaskVolume load_mask(const std::string& id);
  const std::set<std::string>& accessed() const noexcept { return accessed_; }

 private:
  const data::DatasetManifest& manifest_;
  std::optional<data::CropBox> crop_;
  std::set<std::string> accessed_;
};

/// Writes `count` phantoms as float32 images and uint8 masks under
/// out_dir/{images,masks} plus out_dir/manifest.json. Strata cycle through
/// `strata`; sample i uses seed derive_seed(seed, {i}).
data::DatasetManifest synthesize_dataset(const data::PhantomSpec& spec, std::size_t count, std::uint64_t seed,
                                         const std::filesystem::path& out_dir,
                                         const std::vector<std::string>& strata = {"small", "medium", "large"});

/// Rejects manifests where a test entry carries a fold, or train entries lack one.
void check_leakage(const data::DatasetManifest& manifest);

/// Crop box from the training split only (never reads test entries).
data::CropBox training_crop_box(const data::DatasetManifest& manifest, std::size_t margin,
                                SampleLoader* audit = nullptr);

struct FoldResult {
  std::size_t fold = 0;
  std::filesystem::path checkpoint_path;
  optim::TrainResult training;
  std::vector<std::string> validation_ids;
};

struct CVResult {
  std::vector<FoldResult> folds;
  metrics::MetricsReport validation;  // over the union of out-of-fold predictions
  std::map<std::string, std::size_t> prediction_fold;  // id -> fold that predicted it
  std::set<std::string> accessed_ids;  // every sample read during CV
  nn::ModelConfig model;  // effective config (after cropping)
  std::optional<data::CropBox> crop;
};

/// Trains fold `k` and writes its checkpoint; returns the training result.
FoldResult train_fold(const ExperimentConfig& config, const data::DatasetManifest& manifest, std::size_t k,
                      SampleLoader& loader, const nn::ModelConfig& model_config);

/// K-fold cross-validation: one model per fold, best checkpoint predicts its
/// validation fold, metrics over the pooled predictions. Writes checkpoints,
/// predictions (float32 NIfTI), logs and cv_report.json under output_dir.
CVResult run_cv(const ExperimentConfig& config);

/// Voxelwise mean of the members' eval-mode predictions.
data::MaskVolume ensemble_predict(const std::vector<nn::AxialMLPModel>& members, const data::Volume& image);
data::MaskVolume ensemble_predict(const std::vector<nn::Checkpoint>& checkpoints, const data::Volume& image);

/// Ensemble of the fold checkpoints on every test entry; predictions are
/// persisted and the report is computed from the persisted values.
metrics::MetricsReport evaluate_test(const CVResult& result, const ExperimentConfig& config);

/// Metrics of persisted predictions `<pred_dir>/<id>.nii` against manifest masks.
metrics::MetricsReport evaluate_predictions(const std::filesystem::path& pred_dir,
                                            const data::DatasetManifest& manifest, data::Split split,
                                            std::optional<data::CropBox> crop = std::nullopt);

struct BenchmarkResult {
  std::uint64_t params = 0;
  double step_time_seconds = 0.0;  // median
  std::size_t peak_memory_bytes = 0;
  std::vector<double> step_times;
};

/// Median wall time of forward + backward + Adam step at the given batch size
/// on random inputs, after `warmup` untimed steps.
BenchmarkResult benchmark(const nn::ModelConfig& model, std::size_t iterations = 20, std::size_t batch_size = 4,
                          std::size_t warmup = 2, std::uint64_t seed = 0);

}  // namespace axmlp::harness
