#include "axmlp/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "axmlp/errors.hpp"

namespace axmlp::metrics {

namespace {

struct Sums {
  double xy = 0.0, x = 0.0, y = 0.0;
};

Sums sums(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw DimensionError("metric inputs differ in size: " + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()));
  Sums s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s.xy += x[i] * y[i];
    s.x += x[i];
    s.y += y[i];
  }
  return s;
}

Value ratio(double num, double den) {
  if (den == 0.0) return std::nullopt;
  return num / den;
}

Summary summarize(const std::vector<SampleMetrics>& samples, Value SampleMetrics::*field) {
  Summary s;
  double acc = 0.0;
  for (const auto& m : samples) {
    if (const auto& v = m.*field) {
      acc += *v;
      ++s.defined;
    } else {
      ++s.undefined;
    }
  }
  if (s.defined == 0) return s;
  const double mean = acc / static_cast<double>(s.defined);
  double var = 0.0;
  for (const auto& m : samples)
    if (const auto& v = m.*field) var += (*v - mean) * (*v - mean);
  s.mean = mean;
  s.sd = std::sqrt(var / static_cast<double>(s.defined));
  return s;
}

nlohmann::json value_json(const Value& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
Value value_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

nlohmann::json summary_json(const Summary& s) {
  return {{"mean", value_json(s.mean)}, {"sd", value_json(s.sd)}, {"defined", s.defined}, {"undefined", s.undefined}};
}

std::string fmt(const Value& v, int precision = 2) {
  if (!v) return "N/A";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

std::string fmt(const Summary& s) {
  if (!s.mean) return "N/A";
  return fmt(s.mean) + " ± " + fmt(s.sd);
}

}  // namespace

Value precision(std::span<const double> x, std::span<const double> y) {
  const auto s = sums(x, y);
  return ratio(s.xy, s.x);
}

Value recall(std::span<const double> x, std::span<const double> y) {
  const auto s = sums(x, y);
  return ratio(s.xy, s.y);
}

Value dice(std::span<const double> x, std::span<const double> y) {
  const auto s = sums(x, y);
  return ratio(2.0 * s.xy, s.x + s.y);
}

Value volume_error_rate(std::span<const double> x, std::span<const double> y) {
  const auto s = sums(x, y);
  return ratio(s.x - s.y, s.y);
}

Value absolute_volume_error_rate(std::span<const double> x, std::span<const double> y) {
  const auto v = volume_error_rate(x, y);
  if (!v) return std::nullopt;
  return std::fabs(*v);
}

Value pearson_r(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("pearson_r: lists differ in length");
  if (a.size() < 2) return std::nullopt;
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

SampleMetrics evaluate_sample(std::string id, std::span<const double> x, std::span<const double> y) {
  const auto s = sums(x, y);
  SampleMetrics m;
  m.id = std::move(id);
  m.precision = ratio(s.xy, s.x);
  m.recall = ratio(s.xy, s.y);
  m.dice = ratio(2.0 * s.xy, s.x + s.y);
  m.ver = ratio(s.x - s.y, s.y);
  if (m.ver) m.aver = std::fabs(*m.ver);
  m.predicted_volume = s.x;
  m.true_volume = s.y;
  return m;
}

MetricsReport aggregate(std::vector<SampleMetrics> samples) {
  if (samples.empty()) throw ParameterError("evaluate: no samples");
  MetricsReport r;
  r.samples = std::move(samples);
  r.dice = summarize(r.samples, &SampleMetrics::dice);
  r.precision = summarize(r.samples, &SampleMetrics::precision);
  r.recall = summarize(r.samples, &SampleMetrics::recall);
  r.ver = summarize(r.samples, &SampleMetrics::ver);
  r.aver = summarize(r.samples, &SampleMetrics::aver);
  std::vector<double> pv, tv;
  for (const auto& m : r.samples) {
    pv.push_back(m.predicted_volume);
    tv.push_back(m.true_volume);
  }
  r.pearson_r = pearson_r(pv, tv);
  return r;
}

MetricsReport evaluate(const std::vector<PredictionPair>& pairs) {
  std::vector<SampleMetrics> samples;
  samples.reserve(pairs.size());
  for (const auto& p : pairs) samples.push_back(evaluate_sample(p.id, p.prediction, p.truth));
  return aggregate(std::move(samples));
}

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json j;
  if (!report.note.empty()) j["note"] = report.note;
  j["summary"] = {{"dice", summary_json(report.dice)},
                  {"precision", summary_json(report.precision)},
                  {"recall", summary_json(report.recall)},
                  {"ver", summary_json(report.ver)},
                  {"aver", summary_json(report.aver)},
                  {"pearson_r", value_json(report.pearson_r)}};
  auto& rows = j["samples"] = nlohmann::json::array();
  for (const auto& m : report.samples)
    rows.push_back({{"id", m.id},
                    {"dice", value_json(m.dice)},
                    {"precision", value_json(m.precision)},
                    {"recall", value_json(m.recall)},
                    {"ver", value_json(m.ver)},
                    {"aver", value_json(m.aver)},
                    {"predicted_volume", m.predicted_volume},
                    {"true_volume", m.true_volume}});
  return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
  std::vector<SampleMetrics> samples;
  for (const auto& row : j.at("samples")) {
    SampleMetrics m;
    m.id = row.at("id").get<std::string>();
    m.dice = value_from(row.at("dice"));
    m.precision = value_from(row.at("precision"));
    m.recall = value_from(row.at("recall"));
    m.ver = value_from(row.at("ver"));
    m.aver = value_from(row.at("aver"));
    m.predicted_volume = row.at("predicted_volume").get<double>();
    m.true_volume = row.at("true_volume").get<double>();
    samples.push_back(std::move(m));
  }
  auto r = aggregate(std::move(samples));
  r.note = j.value("note", "");
  return r;
}

// Pads by code points so multi-byte characters such as '±' keep columns aligned.
static std::string pad(const std::string& s, int width) {
  int visible = 0;
  for (unsigned char c : s) visible += (c & 0xC0) != 0x80;
  return s + std::string(static_cast<std::size_t>(std::max(0, width - visible)), ' ');
}

void write_table(std::ostream& os, const MetricsReport& report, const std::string& label) {
  const int first = std::max<int>(static_cast<int>(label.size()), 8) + 2;
  const std::string cells[] = {fmt(report.dice), fmt(report.precision), fmt(report.recall), fmt(report.ver),
                                fmt(report.aver)};
  int col = 15;
  for (const auto& c : cells) col = std::max(col, static_cast<int>(c.size()) + 2);
  os << std::left << std::setw(first) << "" << std::setw(col) << "Dice" << std::setw(col) << "Precision"
     << std::setw(col) << "Recall" << std::setw(col) << "MVER" << std::setw(col) << "MAVER" << "Pearson's r\n";
  os << std::setw(first) << label;
  for (const auto& c : cells) os << pad(c, col);
  os << fmt(report.pearson_r) << '\n';
  os << std::right;
}

void write_csv(std::ostream& os, const MetricsReport& report) {
  auto cell = [](const Value& v) { return v ? fmt(v, 6) : std::string("N/A"); };
  os << "id,dice,precision,recall,ver,aver,predicted_volume,true_volume\n";
  for (const auto& m : report.samples)
    os << m.id << ',' << cell(m.dice) << ',' << cell(m.precision) << ',' << cell(m.recall) << ',' << cell(m.ver)
       << ',' << cell(m.aver) << ',' << std::setprecision(10) << m.predicted_volume << ',' << m.true_volume << '\n';
  os << "mean," << cell(report.dice.mean) << ',' << cell(report.precision.mean) << ',' << cell(report.recall.mean)
     << ',' << cell(report.ver.mean) << ',' << cell(report.aver.mean) << ",,\n";
  os << "sd," << cell(report.dice.sd) << ',' << cell(report.precision.sd) << ',' << cell(report.recall.sd) << ','
     << cell(report.ver.sd) << ',' << cell(report.aver.sd) << ",,\n";
  os << "pearson_r," << cell(report.pearson_r) << ",,,,,,\n";
}

}  // namespace axmlp::metrics
