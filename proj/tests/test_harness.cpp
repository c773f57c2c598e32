#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "axmlp/errors.hpp"
#include "axmlp/harness.hpp"
#include "axmlp/nifti.hpp"
#include "fixtures.hpp"

using namespace axmlp;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "axmlp_test_harness" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 8 training phantoms in two folds plus 3 test phantoms.
harness::ExperimentConfig smoke_experiment(const fs::path& dir) {
  auto manifest = harness::synthesize_dataset(axmlp::testing::desk_phantom_spec(), 11, 5, dir / "data");
  std::mt19937_64 rng(3);
  manifest = data::make_folds(data::stratified_split(manifest, 3.0 / 11.0, rng), 2, rng);
  data::save_manifest(dir / "data" / "manifest.json", manifest);

  harness::ExperimentConfig c;
  c.manifest = dir / "data" / "manifest.json";
  c.model.crop_shape = {48, 48, 40};
  c.model.hidden = 2;
  c.model.depth = 1;
  c.schedule.epochs = 5;
  c.schedule.decay_epoch = 4;
  c.schedule.batch_size = 2;
  c.augment.enabled = false;
  c.folds = 2;
  c.seed = 11;
  c.output_dir = dir / "run";
  return c;
}

std::set<std::string> ids_with(const data::DatasetManifest& m, data::Split s) {
  std::set<std::string> out;
  for (const auto* e : m.with_split(s)) out.insert(e->id);
  return out;
}

// Model whose output is the constant `p` everywhere.
nn::AxialMLPModel constant_model(const nn::ModelConfig& c, double p) {
  nn::AxialMLPModel m(c, 0);
  for (auto& w : m.head_weight.data()) w = 0.0;
  m.head_bias.data()[0] = std::log(p / (1.0 - p));
  return m;
}

}  // namespace

TEST_SUITE("harness") {
  TEST_CASE("synthesized dataset is readable and stratified") {
    const auto dir = fresh_dir("synth");
    const auto m = harness::synthesize_dataset(axmlp::testing::desk_phantom_spec(), 6, 1, dir);
    REQUIRE(m.entries.size() == 6);
    CHECK(m.entries[0].stratum == "small");
    CHECK(m.entries[4].stratum == "medium");
    const auto loaded = data::load_manifest(dir / "manifest.json");
    const auto mask = data::read_volume(loaded.resolve(loaded.entries[2].mask));
    CHECK(data::is_binary(mask));
    CHECK(mask.shape == data::Extent3{48, 48, 40});
    const auto other = fresh_dir("synth2");
    harness::synthesize_dataset(axmlp::testing::desk_phantom_spec(), 6, 1, other);
    CHECK(file_bytes(dir / "images" / "ph3.nii") == file_bytes(other / "images" / "ph3.nii"));
    CHECK(file_bytes(dir / "manifest.json") == file_bytes(other / "manifest.json"));
  }

  TEST_CASE("cross-validation smoke run, coverage, audit, determinism and test evaluation") {
    const auto dir = fresh_dir("cv");
    const auto config = smoke_experiment(dir);
    const auto manifest = data::load_manifest(config.manifest);
    const auto train_ids = ids_with(manifest, data::Split::Train);
    const auto test_ids = ids_with(manifest, data::Split::Test);
    REQUIRE(train_ids.size() == 8);
    REQUIRE(test_ids.size() == 3);

    const auto result = harness::run_cv(config);

    // Out-of-fold predictions cover the training set exactly once.
    std::set<std::string> predicted;
    std::size_t total = 0;
    for (const auto& f : result.folds) {
      total += f.validation_ids.size();
      predicted.insert(f.validation_ids.begin(), f.validation_ids.end());
      CHECK(f.training.history.size() == 5);
      CHECK(fs::exists(f.checkpoint_path));
    }
    CHECK(total == 8);
    CHECK(predicted == train_ids);
    CHECK(result.validation.samples.size() == 8);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(config.output_dir / "predictions" / "val")) files += e.is_regular_file();
    CHECK(files == 8);

    // The test split was never read.
    for (const auto& id : test_ids) CHECK(result.accessed_ids.count(id) == 0);

    // The pooled report equals a recomputation from the persisted predictions.
    const auto recomputed =
        harness::evaluate_predictions(config.output_dir / "predictions" / "val", manifest, data::Split::Train);
    CHECK(std::abs(*recomputed.dice.mean - *result.validation.dice.mean) <= 1e-12);
    CHECK(std::abs(*recomputed.ver.mean - *result.validation.ver.mean) <= 1e-12);

    // Same seeds reproduce every artifact.
    const std::string report = file_bytes(config.output_dir / "cv_report.json");
    const std::string ckpt = file_bytes(result.folds[1].checkpoint_path);
    const auto rerun = harness::run_cv(config);
    CHECK(file_bytes(config.output_dir / "cv_report.json") == report);
    CHECK(file_bytes(rerun.folds[1].checkpoint_path) == ckpt);

    // Test evaluation: one row per test entry, recomputable from disk.
    const auto test_report = harness::evaluate_test(result, config);
    CHECK(test_report.samples.size() == test_ids.size());
    const auto from_disk =
        harness::evaluate_predictions(config.output_dir / "predictions" / "test", manifest, data::Split::Test);
    for (std::size_t i = 0; i < from_disk.samples.size(); ++i)
      CHECK(std::abs(*from_disk.samples[i].dice - *test_report.samples[i].dice) <= 1e-12);

    // Averaging does not fall far below the weakest member.
    harness::SampleLoader loader(manifest, std::nullopt);
    double worst_member = 1.0;
    for (const auto& f : result.folds) {
      const auto model = f.training.best.instantiate();
      double acc = 0.0;
      for (const auto& id : test_ids) {
        const auto s = loader.load(id);
        acc += *metrics::dice(optim::predict(model, s.image).data, s.mask.data);
      }
      worst_member = std::min(worst_member, acc / test_ids.size());
    }
    CHECK(*test_report.dice.mean >= worst_member - 0.02);
  }

  TEST_CASE("contaminated manifests are refused") {
    const auto dir = fresh_dir("leak");
    auto config = smoke_experiment(dir);
    auto manifest = data::load_manifest(config.manifest);
    for (auto& e : manifest.entries)
      if (e.split == data::Split::Test) {
        e.fold = 0;
        break;
      }
    CHECK_THROWS_AS(harness::check_leakage(manifest), LeakageError);
    manifest.base_dir.clear();
    const auto leaked = dir / "data" / "leaked.json";
    std::ofstream(leaked) << nlohmann::json(manifest).dump();
    config.manifest = leaked;
    CHECK_THROWS_AS(harness::run_cv(config), LeakageError);

    // A CV result that predicted a test id cannot be used for test evaluation.
    harness::CVResult fake;
    auto clean = smoke_experiment(fresh_dir("leak2"));
    const auto m = data::load_manifest(clean.manifest);
    fake.prediction_fold[m.with_split(data::Split::Test).front()->id] = 0;
    CHECK_THROWS_AS(harness::evaluate_test(fake, clean), LeakageError);
  }

  TEST_CASE("a failing fold aborts the run and names the fold") {
    const auto dir = fresh_dir("nan");
    auto config = smoke_experiment(dir);
    const auto manifest = data::load_manifest(config.manifest);
    // A NaN voxel in a fold-0 image stops fold 0 while its data loads.
    for (const auto& e : manifest.entries) {
      if (e.split != data::Split::Train || *e.fold != 0) continue;
      auto v = data::read_volume(manifest.resolve(e.image));
      v.data[100] = std::numeric_limits<double>::quiet_NaN();
      data::write_volume(manifest.resolve(e.image), v, data::NiftiType::Float64);
      break;
    }
    try {
      harness::run_cv(config);
      FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
      CHECK(std::string(e.what()).find("fold 0") != std::string::npos);
      CHECK(std::string(e.what()).find("non-finite") != std::string::npos);
    }
  }

  TEST_CASE("ensemble averages member predictions") {
    nn::ModelConfig c;
    c.crop_shape = {16, 16, 16};
    c.hidden = 2;
    c.depth = 1;
    std::mt19937_64 rng(4);
    data::Volume image({16, 16, 16});
    std::normal_distribution<double> n;
    for (auto& v : image.data) v = n(rng);

    const auto constant = harness::ensemble_predict({constant_model(c, 0.2), constant_model(c, 0.6)}, image);
    for (double v : constant.data) CHECK(v == doctest::Approx(0.4).epsilon(1e-12));

    const nn::AxialMLPModel a(c, 1), b(c, 2), d(c, 3);
    const auto single = optim::predict(a, image);
    const auto same = harness::ensemble_predict({a.clone(), a.clone(), a.clone()}, image);
    for (std::size_t i = 0; i < single.data.size(); ++i) CHECK(std::abs(same.data[i] - single.data[i]) <= 1e-12);

    const auto pa = optim::predict(a, image), pb = optim::predict(b, image), pd = optim::predict(d, image);
    const auto mixed = harness::ensemble_predict(
        std::vector<nn::Checkpoint>{nn::make_checkpoint(a), nn::make_checkpoint(b), nn::make_checkpoint(d)}, image);
    for (std::size_t i = 0; i < mixed.data.size(); ++i) {
      CHECK(std::abs(mixed.data[i] - (pa.data[i] + pb.data[i] + pd.data[i]) / 3.0) <= 1e-12);
      CHECK(mixed.data[i] >= std::min({pa.data[i], pb.data[i], pd.data[i]}) - 1e-15);
      CHECK(mixed.data[i] <= std::max({pa.data[i], pb.data[i], pd.data[i]}) + 1e-15);
    }

    nn::ModelConfig wider = c;
    wider.hidden = 3;
    CHECK_THROWS_AS(harness::ensemble_predict({a.clone(), nn::AxialMLPModel(wider, 0)}, image), ParameterError);
    CHECK_THROWS_AS(harness::ensemble_predict(std::vector<nn::AxialMLPModel>{}, image), ParameterError);
  }

  TEST_CASE("config file round trip resolves relative paths") {
    const auto dir = fresh_dir("config");
    harness::ExperimentConfig c;
    c.manifest = "data/manifest.json";
    c.output_dir = "out";
    c.model.hidden = 4;
    c.schedule.epochs = 20;
    c.schedule.decay_epoch = 15;
    c.crop_margin = 10;
    std::ofstream(dir / "exp.json") << nlohmann::json(c).dump(2);
    const auto back = harness::load_config(dir / "exp.json");
    CHECK(back.manifest == dir / "data/manifest.json");
    CHECK(back.output_dir == dir / "out");
    CHECK(back.model == c.model);
    CHECK(back.schedule.decay_epoch == 15);
    CHECK(back.crop_margin == std::optional<std::size_t>(10));

    std::ofstream(dir / "bad.json") << "{\"manifest\": 3";
    CHECK_THROWS_AS(harness::load_config(dir / "bad.json"), ParseError);
    c.folds = 1;
    std::ofstream(dir / "one.json") << nlohmann::json(c).dump();
    CHECK_THROWS_AS(harness::load_config(dir / "one.json"), ParameterError);
  }

  TEST_CASE("benchmark reports the closed-form parameter count and scales with width") {
    nn::ModelConfig small;
    small.crop_shape = {32, 32, 32};
    small.hidden = 4;
    small.depth = 2;
    nn::ModelConfig large = small;
    large.hidden = 16;
    const auto a = harness::benchmark(small, 5, 2, 1);
    const auto b = harness::benchmark(large, 5, 2, 1);
    CHECK(a.params == nn::parameter_count(small));
    CHECK(a.step_times.size() == 5);
    CHECK(b.step_time_seconds > a.step_time_seconds);
    CHECK(b.peak_memory_bytes > a.peak_memory_bytes);

    nn::ModelConfig published;
    published.hidden = 8;
    CHECK(nn::parameter_count(published) == 209317);
  }

  TEST_CASE("benchmark medians are stable across repeats") {
    nn::ModelConfig c;
    c.crop_shape = {32, 32, 32};
    c.hidden = 8;
    c.depth = 2;
    const auto first = harness::benchmark(c, 20, 4, 2);
    const auto second = harness::benchmark(c, 20, 4, 2);
    const double rel = std::abs(first.step_time_seconds - second.step_time_seconds) /
                       std::min(first.step_time_seconds, second.step_time_seconds);
    MESSAGE("median step " << first.step_time_seconds << " s vs " << second.step_time_seconds << " s");
    CHECK(rel < 0.2);
  }
}
