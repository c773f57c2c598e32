#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "axmlp/baselines.hpp"
#include "axmlp/errors.hpp"
#include "axmlp/harness.hpp"
#include "axmlp/nifti.hpp"

using namespace axmlp;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write " + path.string(), 0);
  out << j.dump(2) << '\n';
}

std::optional<data::CropBox> read_crop(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return read_json(path).get<data::CropBox>();
}

void print_report(const metrics::MetricsReport& report, const std::string& label) {
  metrics::write_table(std::cout, report, label);
}

// --- subcommands -------------------------------------------------------------

struct SynthArgs {
  std::string spec, out;
  std::size_t count = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> strata{"small", "medium", "large"};
};

int synth(const SynthArgs& a) {
  data::PhantomSpec spec;
  if (!a.spec.empty()) spec = read_json(a.spec).get<data::PhantomSpec>();
  const auto m = harness::synthesize_dataset(spec, a.count, a.seed, a.out, a.strata);
  std::cout << "wrote " << m.entries.size() << " phantoms and " << (fs::path(a.out) / "manifest.json").string()
            << '\n';
  return kOk;
}

struct SplitArgs {
  std::string manifest, out;
  double test_fraction = 0.2;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
};

int split(const SplitArgs& a) {
  auto m = data::load_manifest(a.manifest);
  std::mt19937_64 rng(a.seed);
  m = data::make_folds(data::stratified_split(m, a.test_fraction, rng), a.folds, rng);
  const fs::path out = a.out.empty() ? fs::path(a.manifest) : fs::path(a.out);
  data::save_manifest(out, m);
  std::cout << m.with_split(data::Split::Train).size() << " train in " << m.folds << " folds, "
            << m.with_split(data::Split::Test).size() << " test -> " << out.string() << '\n';
  return kOk;
}

int train(const std::string& config_path, std::size_t fold) {
  const auto config = harness::load_config(config_path);
  const auto manifest = data::load_manifest(config.manifest);
  harness::check_leakage(manifest);
  if (fold >= manifest.folds) throw ParameterError("fold " + std::to_string(fold) + " out of range");
  auto model = config.model;
  std::optional<data::CropBox> crop;
  if (config.crop_margin) {
    crop = harness::training_crop_box(manifest, *config.crop_margin);
    model.crop_shape = crop->size();
    write_json(config.output_dir / "crop.json", *crop);
  }
  harness::SampleLoader loader(manifest, crop);
  const auto fr = harness::train_fold(config, manifest, fold, loader, model);
  std::cout << "fold " << fold << ": best epoch " << fr.training.best_epoch << ", validation Dice "
            << fr.training.best_val_dice << " -> " << fr.checkpoint_path.string() << '\n';
  return kOk;
}

int cv(const std::string& config_path, bool skip_test) {
  const auto config = harness::load_config(config_path);
  const auto result = harness::run_cv(config);
  print_report(result.validation, "Cross-validation (" + std::to_string(config.folds) + " folds)");
  if (!skip_test) {
    const auto manifest = data::load_manifest(config.manifest);
    if (!manifest.with_split(data::Split::Test).empty())
      print_report(harness::evaluate_test(result, config), "Test set (fold ensemble)");
  }
  std::cout << "outputs in " << config.output_dir.string() << '\n';
  return kOk;
}

struct PredictArgs {
  std::string checkpoints, input, out, crop;
};

int predict(const PredictArgs& a) {
  std::vector<fs::path> paths;
  for (const auto& e : fs::directory_iterator(a.checkpoints))
    if (e.path().extension() == ".ckpt") paths.push_back(e.path());
  if (paths.empty()) throw ParameterError("no .ckpt files in " + a.checkpoints);
  std::sort(paths.begin(), paths.end());
  std::vector<nn::Checkpoint> members;
  for (const auto& p : paths) members.push_back(nn::load_checkpoint(p));

  auto image = data::read_volume(a.input);
  if (const auto crop = read_crop(a.crop)) image = data::apply_crop(image, *crop);
  const auto pred = harness::ensemble_predict(members, data::z_normalize(image));
  data::write_volume(a.out, pred, data::NiftiType::Float32);
  std::cout << "ensemble of " << members.size() << " -> " << a.out << '\n';
  return kOk;
}

struct BaselineArgs {
  std::string manifest, kind = "mean", out, report;
  std::size_t steps = 100;
  double lr = 1.0;
};

int baseline(const BaselineArgs& a) {
  const auto manifest = data::load_manifest(a.manifest);
  harness::check_leakage(manifest);
  harness::SampleLoader loader(manifest, std::nullopt);
  std::vector<data::MaskVolume> train_masks;
  for (const auto* e : manifest.with_split(data::Split::Train)) train_masks.push_back(loader.load_mask(e->id));
  const std::string set_name = fs::path(a.manifest).filename().string() + ":train";
  const auto mask = a.kind == "optimized" ? baselines::optimized_mask(train_masks, a.steps, a.lr, set_name)
                                          : baselines::mean_mask(train_masks, set_name);
  if (!a.out.empty()) data::write_volume(a.out, mask.values, data::NiftiType::Float32);

  std::vector<data::MaskVolume> test_masks;
  std::vector<std::string> ids;
  for (const auto* e : manifest.with_split(data::Split::Test)) {
    test_masks.push_back(loader.load_mask(e->id));
    ids.push_back(e->id);
  }
  if (test_masks.empty()) {
    std::cout << baselines::to_string(mask.provenance) << " mask fitted on " << train_masks.size()
              << " masks; no test entries to evaluate\n";
    return kOk;
  }
  std::vector<metrics::PredictionPair> pairs;
  for (std::size_t i = 0; i < test_masks.size(); ++i)
    pairs.push_back({ids[i], mask.values.data, test_masks[i].data});
  const auto report = metrics::evaluate(pairs);
  print_report(report, baselines::to_string(mask.provenance) + " mask baseline (test)");
  if (!a.report.empty()) write_json(a.report, metrics::to_json(report));
  return kOk;
}

struct EvalArgs {
  std::string pred, manifest, split = "test", out, crop;
};

int eval(const EvalArgs& a) {
  const auto manifest = data::load_manifest(a.manifest);
  const auto which = a.split == "val" ? data::Split::Train : data::Split::Test;
  const auto report = harness::evaluate_predictions(a.pred, manifest, which, read_crop(a.crop));
  if (!a.out.empty()) write_json(a.out, metrics::to_json(report));
  print_report(report, a.split == "val" ? "Cross-validation" : "Test set");
  return kOk;
}

int report(const std::string& in, const std::string& format, const std::string& label) {
  const auto r = metrics::report_from_json(read_json(in));
  if (format == "csv")
    metrics::write_csv(std::cout, r);
  else
    metrics::write_table(std::cout, r, label.empty() ? fs::path(in).stem().string() : label);
  return kOk;
}

struct BenchArgs {
  std::string config;
  std::vector<std::size_t> hidden;
  std::size_t iterations = 20, batch = 4;
};

int bench(const BenchArgs& a) {
  nn::ModelConfig model;
  if (!a.config.empty()) {
    const auto j = read_json(a.config);
    if (j.contains("model")) model = j["model"].get<nn::ModelConfig>();
  }
  const std::vector<std::size_t> widths = a.hidden.empty() ? std::vector<std::size_t>{model.hidden} : a.hidden;
  std::cout << "hidden  params      step_s    peak_MB\n";
  for (auto f : widths) {
    auto c = model;
    c.hidden = f;
    const auto r = harness::benchmark(c, a.iterations, a.batch);
    std::printf("%-7zu %-11llu %-9.4f %.1f\n", f, static_cast<unsigned long long>(r.params), r.step_time_seconds,
                static_cast<double>(r.peak_memory_bytes) / (1024.0 * 1024.0));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Axial-MLP volumetric segmentation: data, training, evaluation"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand("synth", "generate synthetic phantoms and a manifest");
  synth_cmd->add_option("--spec", synth_args.spec, "phantom spec JSON (defaults when omitted)")->check(CLI::ExistingFile);
  synth_cmd->add_option("--count", synth_args.count, "number of phantoms")->required();
  synth_cmd->add_option("--seed", synth_args.seed, "dataset seed");
  synth_cmd->add_option("--out", synth_args.out, "output directory")->required();
  synth_cmd->add_option("--strata", synth_args.strata, "stratum labels, assigned cyclically");

  SplitArgs split_args;
  auto* split_cmd = app.add_subcommand("split", "stratified train/test split and fold assignment");
  split_cmd->add_option("--manifest", split_args.manifest)->required()->check(CLI::ExistingFile);
  split_cmd->add_option("--test-fraction", split_args.test_fraction)->check(CLI::Range(0.0, 1.0));
  split_cmd->add_option("--folds", split_args.folds);
  split_cmd->add_option("--seed", split_args.seed);
  split_cmd->add_option("--out", split_args.out, "output manifest (default: overwrite input)");

  std::string config_path;
  std::size_t fold = 0;
  auto* train_cmd = app.add_subcommand("train", "train one cross-validation fold");
  train_cmd->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--fold", fold)->required();

  bool skip_test = false;
  auto* cv_cmd = app.add_subcommand("cv", "cross-validation, then test-set ensemble evaluation");
  cv_cmd->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
  cv_cmd->add_flag("--no-test", skip_test, "skip the test-set evaluation");

  PredictArgs predict_args;
  auto* predict_cmd = app.add_subcommand("predict", "ensemble prediction for one image");
  predict_cmd->add_option("--checkpoints", predict_args.checkpoints)->required()->check(CLI::ExistingDirectory);
  predict_cmd->add_option("--input", predict_args.input)->required()->check(CLI::ExistingFile);
  predict_cmd->add_option("--out", predict_args.out)->required();
  predict_cmd->add_option("--crop", predict_args.crop, "crop.json written by cv")->check(CLI::ExistingFile);

  BaselineArgs baseline_args;
  auto* baseline_cmd = app.add_subcommand("baseline", "constant-mask baseline on the test split");
  baseline_cmd->add_option("--manifest", baseline_args.manifest)->required()->check(CLI::ExistingFile);
  baseline_cmd->add_option("--kind", baseline_args.kind)->check(CLI::IsMember({"mean", "optimized"}));
  baseline_cmd->add_option("--steps", baseline_args.steps);
  baseline_cmd->add_option("--lr", baseline_args.lr);
  baseline_cmd->add_option("--out", baseline_args.out, "write the mask as NIfTI");
  baseline_cmd->add_option("--report", baseline_args.report, "write the report as JSON");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "metrics of persisted predictions");
  eval_cmd->add_option("--pred", eval_args.pred)->required()->check(CLI::ExistingDirectory);
  eval_cmd->add_option("--manifest", eval_args.manifest)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", eval_args.split)->check(CLI::IsMember({"val", "test"}));
  eval_cmd->add_option("--out", eval_args.out);
  eval_cmd->add_option("--crop", eval_args.crop)->check(CLI::ExistingFile);

  std::string report_in, report_format = "table", report_label;
  auto* report_cmd = app.add_subcommand("report", "print a report as a table or CSV");
  report_cmd->add_option("--in", report_in)->required()->check(CLI::ExistingFile);
  report_cmd->add_option("--format", report_format)->check(CLI::IsMember({"table", "csv"}));
  report_cmd->add_option("--label", report_label);

  BenchArgs bench_args;
  auto* bench_cmd = app.add_subcommand("bench", "median training-step time and parameter count");
  bench_cmd->add_option("--config", bench_args.config)->check(CLI::ExistingFile);
  bench_cmd->add_option("--hidden", bench_args.hidden, "override the width; repeat for a sweep");
  bench_cmd->add_option("--iterations", bench_args.iterations);
  bench_cmd->add_option("--batch", bench_args.batch);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*synth_cmd) return synth(synth_args);
    if (*split_cmd) return split(split_args);
    if (*train_cmd) return train(config_path, fold);
    if (*cv_cmd) return cv(config_path, skip_test);
    if (*predict_cmd) return predict(predict_args);
    if (*baseline_cmd) return baseline(baseline_args);
    if (*eval_cmd) return eval(eval_args);
    if (*report_cmd) return report(report_in, report_format, report_label);
    if (*bench_cmd) return bench(bench_args);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const UndefinedValueError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const ParameterError& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kUsage;
  } catch (const ContractError& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kUsage;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    // ParseError, DimensionError, LeakageError and filesystem errors.
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}
