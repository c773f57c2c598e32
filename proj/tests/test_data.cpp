#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "axmlp/augment.hpp"
#include "axmlp/errors.hpp"
#include "axmlp/manifest.hpp"
#include "axmlp/nifti.hpp"
#include "axmlp/phantom.hpp"
#include "axmlp/preprocess.hpp"
#include "fixtures.hpp"

using namespace axmlp;
using namespace axmlp::data;

namespace {

std::filesystem::path scratch_dir() {
  auto dir = std::filesystem::temp_directory_path() / "axmlp_test_data";
  std::filesystem::create_directories(dir);
  return dir;
}

Volume random_volume(Extent3 shape, std::mt19937_64& rng) {
  Volume v(shape);
  std::normal_distribution<double> n(3.0, 2.0);
  for (auto& x : v.data) x = n(rng);
  return v;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::string& b) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  os.write(b.data(), static_cast<std::streamsize>(b.size()));
}

template <class T>
void poke(std::string& bytes, std::size_t offset, T value) {
  std::memcpy(bytes.data() + offset, &value, sizeof value);
}

DatasetManifest stratified_manifest(const std::vector<std::pair<std::string, int>>& strata) {
  DatasetManifest m;
  int id = 0;
  for (const auto& [name, count] : strata)
    for (int i = 0; i < count; ++i) m.entries.push_back({"s" + std::to_string(id++), "", "", name});
  return m;
}

std::map<std::string, int> count_split(const DatasetManifest& m, Split s) {
  std::map<std::string, int> out;
  for (const auto& e : m.entries)
    if (e.split == s) ++out[e.stratum];
  return out;
}

}  // namespace

TEST_SUITE("phantom") {
  TEST_CASE("generation is deterministic per seed") {
    const PhantomSpec spec;
    const auto a = generate_phantom(spec, 42), b = generate_phantom(spec, 42), c = generate_phantom(spec, 43);
    CHECK(a.image.data == b.image.data);
    CHECK(a.mask.data == b.mask.data);
    CHECK(a.image.data != c.image.data);
  }

  TEST_CASE("noiseless phantom has exactly three intensity levels") {
    PhantomSpec spec;
    spec.noise_sd = 0.0;
    spec.bias_amplitude = 0.0;
    const auto p = generate_phantom(spec, 7);
    const std::set<double> levels(p.image.data.begin(), p.image.data.end());
    CHECK(levels == std::set<double>{spec.cavity_intensity, spec.tissue_intensity, spec.ribbon_intensity});
    for (std::size_t i = 0; i < p.mask.data.size(); ++i)
      CHECK((p.mask.data[i] == 1.0) == (p.image.data[i] == spec.ribbon_intensity));
  }

  TEST_CASE("mask sits inside the cavity and within the configured size for 1000 seeds") {
    const PhantomSpec spec = axmlp::testing::desk_phantom_spec();
    const auto [lo, hi] = spec.mask_volume_bounds();
    REQUIRE(lo > 0.0);
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
      const auto p = generate_phantom(spec, seed);
      double volume = 0.0;
      bool inside = true;
      for (std::size_t i = 0; i < p.mask.data.size(); ++i) {
        volume += p.mask.data[i];
        inside = inside && (p.mask.data[i] == 0.0 || p.cavity.data[i] == 1.0);
      }
      CHECK(inside);
      CHECK(is_binary(p.mask));
      CHECK(volume >= lo);
      CHECK(volume <= hi);
    }
  }

  TEST_CASE("strata scale the ribbon length") {
    const PhantomSpec spec;
    CHECK(spec.for_stratum("small").ribbon_length_max == doctest::Approx(0.75 * spec.ribbon_length_max));
    CHECK(spec.for_stratum("large").ribbon_length_min == doctest::Approx(1.25 * spec.ribbon_length_min));
    CHECK(spec.for_stratum("small").stratum == "small");
    double small = 0, large = 0;
    for (std::uint64_t s = 0; s < 20; ++s) {
      for (double v : generate_phantom(spec.for_stratum("small"), s).mask.data) small += v;
      for (double v : generate_phantom(spec.for_stratum("large"), s).mask.data) large += v;
    }
    CHECK(large > small);
  }

  TEST_CASE("impossible geometry is rejected") {
    PhantomSpec spec;
    spec.arc_radius_min = spec.arc_radius_max = 20.0;
    CHECK_THROWS_AS(spec.validate(), ParameterError);
    CHECK_THROWS_AS(generate_phantom(spec, 0), ParameterError);
    spec = {};
    spec.shape = {10, 10, 10};
    CHECK_THROWS_AS(generate_phantom(spec, 0), ParameterError);
  }

  TEST_CASE("spec json round trip") {
    PhantomSpec spec;
    spec.shape = {48, 48, 40};
    spec.noise_sd = 0.125;
    spec.stratum = "large";
    const PhantomSpec back = nlohmann::json(spec).get<PhantomSpec>();
    CHECK(nlohmann::json(back) == nlohmann::json(spec));
  }
}

TEST_SUITE("preprocess") {
  TEST_CASE("z-normalization") {
    std::mt19937_64 rng(1);
    const Volume v = random_volume({6, 7, 8}, rng);
    const Volume z = z_normalize(v);
    double mean = 0.0, var = 0.0;
    for (double x : z.data) mean += x / z.data.size();
    for (double x : z.data) var += (x - mean) * (x - mean) / z.data.size();
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-10);

    Volume affine = v;
    for (auto& x : affine.data) x = 3.5 * x - 7.0;
    const Volume za = z_normalize(affine);
    for (std::size_t i = 0; i < z.data.size(); ++i) CHECK(za.data[i] == doctest::Approx(z.data[i]).epsilon(1e-12));

    CHECK_THROWS_AS(z_normalize(Volume({3, 3, 3}, 4.0)), UndefinedValueError);
  }

  TEST_CASE("crop box examples") {
    MaskVolume m({100, 100, 100});
    for (std::size_t d = 20; d <= 30; ++d)
      for (std::size_t h = 20; h <= 30; ++h)
        for (std::size_t w = 20; w <= 30; ++w) m.at(d, h, w) = 1.0;
    const CropBox box = crop_bbox(std::vector<MaskVolume>{m}, 10);
    CHECK(box.first == Extent3{10, 10, 10});
    CHECK(box.last == Extent3{40, 40, 40});
    CHECK(box.size() == Extent3{31, 31, 31});

    MaskVolume one({9, 9, 9});
    one.at(4, 2, 7) = 1.0;
    const CropBox tight = crop_bbox(std::vector<MaskVolume>{one}, 0);
    CHECK(tight.first == Extent3{4, 2, 7});
    CHECK(tight.size() == Extent3{1, 1, 1});
    CHECK(apply_crop(one, tight).data == std::vector<double>{1.0});

    const CropBox clamped = crop_bbox(std::vector<MaskVolume>{one}, 5);
    CHECK(clamped.first == Extent3{0, 0, 2});
    CHECK(clamped.last == Extent3{8, 7, 8});

    CHECK_THROWS_AS(crop_bbox(std::vector<MaskVolume>{MaskVolume({4, 4, 4})}), ParameterError);
    CHECK_THROWS_AS(crop_bbox(std::vector<MaskVolume>{one, MaskVolume({4, 4, 4}, 1.0)}), DimensionError);
  }

  TEST_CASE("union box contains every mask voxel") {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<std::size_t> pos(0, 29);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<MaskVolume> masks(3, MaskVolume({30, 30, 30}));
      for (auto& m : masks)
        for (int k = 0; k < 5; ++k) m.at(pos(rng), pos(rng), pos(rng)) = 1.0;
      const CropBox box = crop_bbox(masks, 2);
      double inside = 0.0, total = 0.0;
      for (const auto& m : masks) {
        for (double v : m.data) total += v;
        for (double v : apply_crop(m, box).data) inside += v;
      }
      CHECK(inside == total);
    }
  }

  TEST_CASE("apply_crop extracts the addressed voxels") {
    std::mt19937_64 rng(3);
    const Volume v = random_volume({10, 11, 12}, rng);
    const CropBox box{{2, 3, 4}, {5, 9, 6}};
    const Volume c = apply_crop(v, box);
    CHECK(c.shape == Extent3{4, 7, 3});
    for (std::size_t d = 0; d < 4; ++d)
      for (std::size_t h = 0; h < 7; ++h)
        for (std::size_t w = 0; w < 3; ++w) CHECK(c.at(d, h, w) == v.at(d + 2, h + 3, w + 4));
    CHECK_THROWS_AS(apply_crop(v, CropBox{{0, 0, 0}, {10, 0, 0}}), DimensionError);
  }
}

TEST_SUITE("augment") {
  TEST_CASE("identity parameters leave image and mask unchanged") {
    std::mt19937_64 rng(4);
    const Volume v = random_volume({12, 10, 9}, rng);
    MaskVolume m({12, 10, 9});
    m.at(5, 5, 5) = m.at(6, 5, 4) = 1.0;
    const auto [img, mask] = augment_affine(v, m, AffineParams{});
    for (std::size_t i = 0; i < v.data.size(); ++i) CHECK(std::abs(img.data[i] - v.data[i]) <= 1e-12);
    CHECK(mask.data == m.data);
  }

  TEST_CASE("integer translation shifts the mask") {
    MaskVolume m({16, 16, 16});
    for (std::size_t d = 5; d < 9; ++d) m.at(d, 7, 6) = m.at(d, 8, 6) = 1.0;
    AffineParams p;
    p.translation = {0, 0, 3};
    const auto [img, shifted] = augment_affine(Volume({16, 16, 16}, 1.0), m, p);
    for (std::size_t d = 0; d < 16; ++d)
      for (std::size_t h = 0; h < 16; ++h)
        for (std::size_t w = 3; w < 16; ++w) CHECK(shifted.at(d, h, w) == m.at(d, h, w - 3));
  }

  TEST_CASE("augmented masks stay binary and shapes are preserved") {
    const auto ph = generate_phantom(PhantomSpec{}, 5);
    const AugmentConfig cfg;
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 5; ++trial) {
      const AffineParams p = sample_affine(cfg, rng);
      CHECK(p.scale >= 0.9);
      CHECK(p.scale <= 1.2);
      for (int a = 0; a < 3; ++a) {
        CHECK(std::abs(p.rotation_deg[a]) <= 10.0);
        CHECK(std::abs(p.translation[a]) <= 5.0);
      }
      const auto [img, mask] = augment_affine(ph.image, ph.mask, p);
      CHECK(img.shape == ph.image.shape);
      CHECK(is_binary(mask));
    }
  }

  TEST_CASE("shape mismatch is rejected") {
    CHECK_THROWS_AS(augment_affine(Volume({4, 4, 4}), Volume({4, 4, 5}), AffineParams{}), DimensionError);
  }
}

TEST_SUITE("nifti") {
  TEST_CASE("round trip is bit-exact for every supported type") {
    std::mt19937_64 rng(7);
    const auto dir = scratch_dir();
    const std::vector<std::pair<NiftiType, std::function<double()>>> kinds = {
        {NiftiType::UInt8, [&] { return static_cast<double>(rng() % 256); }},
        {NiftiType::Int16, [&] { return static_cast<double>(static_cast<int>(rng() % 65536) - 32768); }},
        {NiftiType::Float32, [&] { return static_cast<double>(static_cast<float>(std::normal_distribution<double>()(rng))); }},
        {NiftiType::Float64, [&] { return std::normal_distribution<double>(0, 1e3)(rng); }},
    };
    for (const auto& [type, draw] : kinds) {
      for (int trial = 0; trial < 5; ++trial) {
        Volume v({3 + rng() % 5, 2 + rng() % 6, 1 + rng() % 7}, 0.0, {0.5, 1.0, 1.25});
        for (auto& x : v.data) x = draw();
        v.description = "trial " + std::to_string(trial);
        const auto path = dir / "rt.nii";
        write_volume(path, v, type);
        const Volume back = read_volume(path);
        CHECK(back.shape == v.shape);
        CHECK(back.voxel_size == v.voxel_size);
        CHECK(back.description == v.description);
        CHECK(std::memcmp(back.data.data(), v.data.data(), v.data.size() * sizeof(double)) == 0);
      }
    }
  }

  TEST_CASE("binary uint8 mask round trip") {
    MaskVolume m({5, 5, 5});
    for (std::size_t i = 0; i < m.data.size(); i += 3) m.data[i] = 1.0;
    const auto path = scratch_dir() / "mask.nii";
    write_volume(path, m, NiftiType::UInt8);
    CHECK(read_volume(path).data == m.data);
    CHECK(read_bytes(path).size() == kNiftiDataOffset + m.data.size());
  }

  TEST_CASE("integer types refuse values they cannot hold") {
    const auto path = scratch_dir() / "bad.nii";
    CHECK_THROWS_AS(write_volume(path, Volume({2, 2, 2}, 0.5), NiftiType::UInt8), ParameterError);
    CHECK_THROWS_AS(write_volume(path, Volume({2, 2, 2}, 40000.0), NiftiType::Int16), ParameterError);
  }

  TEST_CASE("scale slope and intercept are applied on read") {
    const auto path = scratch_dir() / "scaled.nii";
    Volume v({2, 2, 2});
    for (std::size_t i = 0; i < 8; ++i) v.data[i] = static_cast<double>(i);
    write_volume(path, v, NiftiType::Int16);
    std::string bytes = read_bytes(path);
    poke(bytes, 112, 2.0f);   // scl_slope
    poke(bytes, 116, -1.0f);  // scl_inter
    write_bytes(path, bytes);
    const Volume back = read_volume(path);
    for (std::size_t i = 0; i < 8; ++i) CHECK(back.data[i] == 2.0 * i - 1.0);
  }

  TEST_CASE("opposite byte order headers are read") {
    const auto path = scratch_dir() / "be.nii";
    Volume v({2, 3, 4}, 0.0, {1.0, 2.0, 3.0});
    for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = static_cast<double>(i) - 5.0;
    write_volume(path, v, NiftiType::Int16);
    std::string bytes = read_bytes(path);
    auto flip = [&](std::size_t offset, std::size_t width, std::size_t count) {
      for (std::size_t k = 0; k < count; ++k) std::reverse(bytes.begin() + offset + k * width, bytes.begin() + offset + (k + 1) * width);
    };
    flip(0, 4, 1);    // sizeof_hdr
    flip(40, 2, 8);   // dim
    flip(70, 2, 2);   // datatype, bitpix
    flip(76, 4, 8);   // pixdim
    flip(108, 4, 1);  // vox_offset
    flip(112, 4, 2);  // scl_slope, scl_inter
    flip(kNiftiDataOffset, 2, v.data.size());
    write_bytes(path, bytes);
    const Volume back = read_volume(path);
    CHECK(back.shape == v.shape);
    CHECK(back.voxel_size == v.voxel_size);
    CHECK(back.data == v.data);
  }

  TEST_CASE("malformed files produce parse errors with offsets") {
    const auto dir = scratch_dir();
    const auto good = dir / "good.nii";
    write_volume(good, Volume({2, 2, 2}, 1.0), NiftiType::Float32);
    const std::string bytes = read_bytes(good);
    const auto bad = dir / "broken.nii";

    auto expect = [&](std::string b, std::uint64_t offset, const char* fragment) {
      write_bytes(bad, b);
      try {
        read_volume(bad);
        FAIL("expected ParseError for " << fragment);
      } catch (const ParseError& e) {
        CHECK(e.offset() == offset);
        CHECK(std::string(e.what()).find(fragment) != std::string::npos);
      }
    };

    std::string magic = bytes;
    magic[344] = 'x';
    expect(magic, 344, "magic");

    std::string dtype = bytes;
    poke<std::int16_t>(dtype, 70, 128);
    expect(dtype, 70, "datatype");

    std::string bitpix = bytes;
    poke<std::int16_t>(bitpix, 72, 64);
    expect(bitpix, 72, "bitpix");

    std::string dims = bytes;
    poke<std::int16_t>(dims, 40, 2);
    expect(dims, 40, "3D");

    expect(bytes.substr(0, 200), 200, "truncated NIfTI header");
    expect(bytes.substr(0, bytes.size() - 3), bytes.size() - 3, "truncated voxel data");

    std::string hdr = bytes;
    poke<std::int32_t>(hdr, 0, 540);
    expect(hdr, 0, "sizeof_hdr");

    CHECK_THROWS_AS(read_volume(dir / "does_not_exist.nii"), ParseError);
  }
}

TEST_SUITE("manifest") {
  TEST_CASE("stratified split reproduces the published cohort counts") {
    // 44 controls, 61 relapsing-remitting, 13 primary and 23 secondary
    // progressive; 50 of 141 go to testing. Floors give 48 test slots and two
    // strata receive the remaining units; seed 1 draws the published pair.
    const auto m = stratified_manifest({{"HC", 44}, {"R", 61}, {"P1", 13}, {"P2", 23}});
    std::mt19937_64 rng(1);
    const auto split = stratified_split(m, 50.0 / 141.0, rng);
    CHECK(count_split(split, Split::Test) == std::map<std::string, int>{{"HC", 16}, {"R", 21}, {"P1", 5}, {"P2", 8}});
    CHECK(count_split(split, Split::Train) == std::map<std::string, int>{{"HC", 28}, {"R", 40}, {"P1", 8}, {"P2", 15}});
  }

  TEST_CASE("every seed keeps totals exact and strata within one of their quota") {
    const auto m = stratified_manifest({{"HC", 44}, {"R", 61}, {"P1", 13}, {"P2", 23}});
    const std::map<std::string, double> exact{{"HC", 44 * 50.0 / 141}, {"R", 61 * 50.0 / 141},
                                              {"P1", 13 * 50.0 / 141}, {"P2", 23 * 50.0 / 141}};
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      std::mt19937_64 rng(seed);
      const auto counts = count_split(stratified_split(m, 50.0 / 141.0, rng), Split::Test);
      int total = 0;
      for (const auto& [name, n] : counts) {
        total += n;
        CHECK(std::abs(n - exact.at(name)) < 1.0);
      }
      CHECK(total == 50);
    }
  }

  TEST_CASE("split and folds are deterministic") {
    const auto m = stratified_manifest({{"a", 30}, {"b", 20}});
    std::mt19937_64 r1(9), r2(9);
    const auto s1 = make_folds(stratified_split(m, 0.2, r1), 5, r1);
    const auto s2 = make_folds(stratified_split(m, 0.2, r2), 5, r2);
    CHECK(nlohmann::json(s1) == nlohmann::json(s2));
  }

  TEST_CASE("five folds of 90 uniform samples have 18 each and partition the training set") {
    auto m = stratified_manifest({{"u", 90}});
    for (auto& e : m.entries) e.split = Split::Train;
    std::mt19937_64 rng(10);
    const auto folded = make_folds(m, 5, rng);
    std::map<std::size_t, int> sizes;
    for (const auto& e : folded.entries) {
      REQUIRE(e.fold.has_value());
      ++sizes[*e.fold];
    }
    CHECK(sizes == std::map<std::size_t, int>{{0, 18}, {1, 18}, {2, 18}, {3, 18}, {4, 18}});
  }

  TEST_CASE("folds balance every stratum") {
    auto m = stratified_manifest({{"HC", 44}, {"R", 61}, {"P1", 13}, {"P2", 23}});
    std::mt19937_64 rng(11);
    m = make_folds(stratified_split(m, 50.0 / 141.0, rng), 5, rng);
    std::map<std::string, std::map<std::size_t, int>> per;
    std::map<std::size_t, int> total;
    for (const auto& e : m.entries) {
      if (e.split == Split::Test) {
        CHECK_FALSE(e.fold.has_value());
        continue;
      }
      ++per[e.stratum][*e.fold];
      ++total[*e.fold];
    }
    auto spread = [](const std::map<std::size_t, int>& c) {
      int lo = 1 << 30, hi = 0;
      for (std::size_t k = 0; k < 5; ++k) {
        const int n = c.count(k) ? c.at(k) : 0;
        lo = std::min(lo, n);
        hi = std::max(hi, n);
      }
      return hi - lo;
    };
    CHECK(spread(total) <= 1);
    for (const auto& [name, c] : per) CHECK(spread(c) <= 1);
  }

  TEST_CASE("impossible requests are rejected") {
    const auto m = stratified_manifest({{"a", 3}, {"b", 2}});
    std::mt19937_64 rng(12);
    CHECK_THROWS_AS(stratified_split(m, 0.0, rng), ParameterError);
    CHECK_THROWS_AS(stratified_split(m, 1.0, rng), ParameterError);
    CHECK_THROWS_AS(stratified_split(stratified_manifest({}), 0.5, rng), ParameterError);
    auto train_only = m;
    for (auto& e : train_only.entries) e.split = Split::Train;
    CHECK_THROWS_AS(make_folds(train_only, 3, rng), ParameterError);  // stratum b has 2
    CHECK_THROWS_AS(make_folds(train_only, 1, rng), ParameterError);
    auto dup = m;
    dup.entries[1].id = dup.entries[0].id;
    CHECK_THROWS_AS(dup.validate(), ParameterError);
  }

  TEST_CASE("manifest file round trip resolves relative paths") {
    auto m = stratified_manifest({{"a", 6}, {"b", 5}});
    for (auto& e : m.entries) {
      e.image = "img/" + e.id + ".nii";
      e.mask = "mask/" + e.id + ".nii";
    }
    std::mt19937_64 rng(13);
    m = make_folds(stratified_split(m, 0.3, rng), 2, rng);
    const auto path = scratch_dir() / "sub" / "manifest.json";
    std::filesystem::create_directories(path.parent_path());
    save_manifest(path, m);
    const auto back = load_manifest(path);
    CHECK(nlohmann::json(back) == nlohmann::json(m));
    CHECK(back.resolve(back.entries[0].image) == path.parent_path() / "img" / (back.entries[0].id + ".nii"));
    CHECK_THROWS_AS(load_manifest(scratch_dir() / "missing.json"), ParseError);
  }
}
