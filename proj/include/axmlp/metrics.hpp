#pragma once

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace axmlp::metrics {

/// A metric value; std::nullopt marks an undefined result (empty denominator,
/// zero variance). Undefined values are never replaced by zero.
using Value = std::optional<double>;

// Soft-valued overlap metrics: x is the prediction, y the ground truth.
Value precision(std::span<const double> x, std::span<const double> y);
Value recall(std::span<const double> x, std::span<const double> y);
Value dice(std::span<const double> x, std::span<const double> y);
Value volume_error_rate(std::span<const double> x, std::span<const double> y);
Value absolute_volume_error_rate(std::span<const double> x, std::span<const double> y);

/// Sample Pearson correlation; undefined for fewer than two points or zero variance.
Value pearson_r(std::span<const double> a, std::span<const double> b);

struct SampleMetrics {
  std::string id;
  Value dice, precision, recall, ver, aver;
  double predicted_volume = 0.0;  // sum of soft prediction, voxels
  double true_volume = 0.0;
};

/// Mean and biased (divide-by-n) standard deviation over the defined values.
struct Summary {
  Value mean;
  Value sd;
  std::size_t defined = 0;
  std::size_t undefined = 0;
};

struct MetricsReport {
  std::vector<SampleMetrics> samples;
  Summary dice, precision, recall, ver, aver;
  Value pearson_r;
  std::string note;
};

SampleMetrics evaluate_sample(std::string id, std::span<const double> x, std::span<const double> y);

struct PredictionPair {
  std::string id;
  std::span<const double> prediction;
  std::span<const double> truth;
};

MetricsReport evaluate(const std::vector<PredictionPair>& pairs);
/// Re-aggregates already computed per-sample rows.
MetricsReport aggregate(std::vector<SampleMetrics> samples);

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

/// Aligned table: Dice, Precision, Recall, MVER, MAVER, Pearson's r.
void write_table(std::ostream& os, const MetricsReport& report, const std::string& label);
/// Per-sample rows followed by a summary row.
void write_csv(std::ostream& os, const MetricsReport& report);

}  // namespace axmlp::metrics
