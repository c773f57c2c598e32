#include "axmlp/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "axmlp/errors.hpp"

namespace axmlp::data {

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Unassigned: break;
  }
  return "unassigned";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  if (s == "unassigned") return Split::Unassigned;
  throw ParameterError("unknown split '" + s + "'");
}

std::filesystem::path DatasetManifest::resolve(const std::string& p) const {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base_dir / path;
}

const ManifestEntry& DatasetManifest::find(const std::string& id) const {
  for (const auto& e : entries)
    if (e.id == id) return e;
  throw ParameterError("no manifest entry with id '" + id + "'");
}

std::vector<const ManifestEntry*> DatasetManifest::with_split(Split split) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(&e);
  return out;
}

void DatasetManifest::validate() const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (!ids.insert(e.id).second) throw ParameterError("duplicate manifest id '" + e.id + "'");
    if (e.split == Split::Test && e.fold)
      throw LeakageError("test entry '" + e.id + "' is assigned to fold " + std::to_string(*e.fold));
    if (e.split != Split::Train && e.fold) throw ParameterError("entry '" + e.id + "' has a fold but is not in train");
    if (folds > 0 && e.split == Split::Train && !e.fold) throw ParameterError("train entry '" + e.id + "' has no fold");
    if (e.fold && *e.fold >= folds) throw ParameterError("entry '" + e.id + "' has out-of-range fold");
  }
}

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = nlohmann::json::object();
  j["folds"] = m.folds;
  auto& arr = j["entries"] = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json je = {{"id", e.id}, {"image", e.image}, {"mask", e.mask}, {"stratum", e.stratum},
                         {"split", to_string(e.split)}};
    je["fold"] = e.fold ? nlohmann::json(*e.fold) : nlohmann::json(nullptr);
    arr.push_back(std::move(je));
  }
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m.folds = j.value("folds", std::size_t{0});
  m.entries.clear();
  for (const auto& je : j.at("entries")) {
    ManifestEntry e;
    e.id = je.at("id").get<std::string>();
    e.image = je.value("image", "");
    e.mask = je.value("mask", "");
    e.stratum = je.value("stratum", "");
    e.split = split_from_string(je.value("split", "unassigned"));
    if (je.contains("fold") && !je["fold"].is_null()) e.fold = je["fold"].get<std::size_t>();
    m.entries.push_back(std::move(e));
  }
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open manifest " + path.string(), 0);
  DatasetManifest m;
  try {
    m = nlohmann::json::parse(in).get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("invalid manifest " + path.string() + ": " + e.what(), 0);
  }
  m.base_dir = path.parent_path();
  m.validate();
  return m;
}

void save_manifest(const std::filesystem::path& path, const DatasetManifest& m) {
  m.validate();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write manifest " + path.string());
  os << nlohmann::json(m).dump(2) << '\n';
}

namespace {

std::map<std::string, std::vector<std::size_t>> group_by_stratum(const DatasetManifest& m, bool train_only) {
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < m.entries.size(); ++i)
    if (!train_only || m.entries[i].split == Split::Train) groups[m.entries[i].stratum].push_back(i);
  return groups;
}

}  // namespace

DatasetManifest stratified_split(DatasetManifest manifest, double test_fraction, std::mt19937_64& rng) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ParameterError("test_fraction must lie in (0, 1)");
  if (manifest.entries.empty()) throw ParameterError("stratified_split: empty manifest");
  manifest.validate();
  auto groups = group_by_stratum(manifest, false);

  const std::size_t total = manifest.entries.size();
  const auto target = static_cast<std::size_t>(std::llround(static_cast<double>(total) * test_fraction));
  if (target == 0 || target >= total) throw ParameterError("stratified_split: split leaves an empty side");

  std::vector<std::string> names;
  std::vector<std::size_t> quota;
  std::vector<double> remainder;
  std::size_t assigned = 0;
  for (const auto& [name, idx] : groups) {
    const double exact = static_cast<double>(idx.size()) * test_fraction;
    const auto base = static_cast<std::size_t>(std::floor(exact));
    names.push_back(name);
    quota.push_back(base);
    remainder.push_back(exact - static_cast<double>(base));
    assigned += base;
  }
  if (assigned > target) throw ParameterError("stratified_split: impossible stratification");
  // Hand out the remaining units one at a time, drawn in proportion to the
  // fractional parts; each stratum gets at most one extra.
  for (std::size_t left = target - assigned; left > 0; --left) {
    double weight_sum = 0.0;
    for (double r : remainder) weight_sum += r;
    if (!(weight_sum > 0.0)) throw ParameterError("stratified_split: impossible stratification");
    double pick = std::uniform_real_distribution<double>(0.0, weight_sum)(rng);
    std::size_t chosen = remainder.size();
    for (std::size_t s = 0; s < remainder.size(); ++s) {
      if (remainder[s] <= 0.0) continue;
      chosen = s;
      if (pick < remainder[s]) break;
      pick -= remainder[s];
    }
    quota[chosen] += 1;
    remainder[chosen] = 0.0;
  }

  for (std::size_t s = 0; s < names.size(); ++s) {
    auto idx = groups[names[s]];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      auto& e = manifest.entries[idx[r]];
      e.split = r < quota[s] ? Split::Test : Split::Train;
      e.fold.reset();
    }
  }
  manifest.folds = 0;
  return manifest;
}

DatasetManifest make_folds(DatasetManifest manifest, std::size_t k, std::mt19937_64& rng) {
  if (k < 2) throw ParameterError("make_folds: need at least 2 folds");
  auto groups = group_by_stratum(manifest, true);
  if (groups.empty()) throw ParameterError("make_folds: no training entries");
  for (const auto& [name, idx] : groups)
    if (idx.size() < k)
      throw ParameterError("make_folds: stratum '" + name + "' has " + std::to_string(idx.size()) +
                           " training samples, fewer than " + std::to_string(k) + " folds");
  std::size_t position = 0;
  for (auto& [name, idx] : groups) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (auto i : idx) manifest.entries[i].fold = position++ % k;
  }
  manifest.folds = k;
  manifest.validate();
  return manifest;
}

}  // namespace axmlp::data
