#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace axmlp::data {

enum class Split { Unassigned, Train, Test };

struct ManifestEntry {
  std::string id;
  std::string image;  // paths relative to the manifest's directory, or absolute
  std::string mask;
  std::string stratum;
  Split split = Split::Unassigned;
  std::optional<std::size_t> fold;  // train entries only
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::size_t folds = 0;  // 0 until make_folds has run
  std::filesystem::path base_dir;  // not serialized; resolves relative paths

  std::filesystem::path resolve(const std::string& p) const;
  const ManifestEntry& find(const std::string& id) const;
  std::vector<const ManifestEntry*> with_split(Split split) const;

  /// Throws LeakageError for a test entry that carries a fold, and
  /// ParameterError on duplicate ids or a train entry without a fold once
  /// folds exist.
  void validate() const;
};

std::string to_string(Split s);
Split split_from_string(const std::string& s);

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const DatasetManifest& m);

/// Per-stratum proportional train/test assignment. Each stratum receives
/// floor(n_s * f) test samples plus, for the strata drawn by `rng` with
/// probability proportional to their fractional remainders, one more, so the
/// total is round(N * f) and every stratum is within one sample of its quota.
DatasetManifest stratified_split(DatasetManifest manifest, double test_fraction, std::mt19937_64& rng);

/// Assigns folds 0..K-1 to train entries: each stratum is shuffled and the
/// strata are dealt round-robin in a single sequence, so folds differ in size
/// by at most one overall and per stratum.
DatasetManifest make_folds(DatasetManifest manifest, std::size_t k, std::mt19937_64& rng);

}  // namespace axmlp::data
