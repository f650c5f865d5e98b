#include "panosim/dataset.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "support/fixtures.hpp"
#include "support/oracles.hpp"

namespace panosim {
namespace {

TEST(Manifest, LoadsPaperSizedDataset) {
  // 404 records at 0.2 m pitch: 20 x 20 block plus a 4-cell corridor stub.
  std::vector<CellCoord> cells;
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) cells.push_back({i, j});
  for (int i = 20; i < 24; ++i) cells.push_back({i, 0});
  testing::TempDir dir;
  const auto path = testing::write_dataset(dir.path(), cells, 0.2, 5376, 2688, /*write_images=*/false);
  const auto m = load_manifest(path);
  EXPECT_EQ(m.records.size(), 404u);
  EXPECT_EQ(GridIndex(m).size(), 404u);
}

TEST(Manifest, EmptyDatasetRejected) {
  testing::TempDir dir;
  const auto path = testing::write_dataset(dir.path(), {}, 0.2, 64, 32, false);
  try {
    load_manifest(path);
    FAIL() << "expected DatasetError";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("empty dataset"), std::string::npos);
  }
}

TEST(Manifest, DuplicateCellNamesBothRecords) {
  DatasetManifest m = testing::grid_manifest({{0, 0}, {1, 0}}, 0.2, 64, 32);
  m.records[1].x_m = 0.005;  // rounds into cell (0,0)
  m.records[1].id = "r_dup";
  const auto report = validate(m, 0.0, false);
  ASSERT_EQ(report.duplicate_cells.size(), 1u);
  EXPECT_NE(report.duplicate_cells[0].find(m.records[0].id), std::string::npos);
  EXPECT_NE(report.duplicate_cells[0].find("r_dup"), std::string::npos);
  EXPECT_THROW(GridIndex{m}, DatasetError);

  testing::TempDir dir;
  const auto path = dir.path() / "manifest.json";
  save_manifest(m, path);
  EXPECT_THROW(load_manifest(path, {.check_files = false}), DatasetError);
}

TEST(Manifest, ParseErrorIsDatasetError) {
  EXPECT_THROW(parse_manifest("{not json"), DatasetError);
  EXPECT_THROW(parse_manifest(R"({"version":1})"), DatasetError);
}

TEST(Manifest, MissingFileReported) {
  testing::TempDir dir;
  const auto path = testing::write_dataset(dir.path(), {{0, 0}}, 0.2, 64, 32, false);
  std::filesystem::remove(dir.path() / "imgs" / "c0_0.png");
  EXPECT_THROW(load_manifest(path), DatasetError);
  const auto m = load_manifest(path, {.check_files = false});
  const auto report = validate(m, 0.0);
  EXPECT_EQ(report.missing_files.size(), 1u);
  EXPECT_FALSE(report.ok());
}

TEST(Manifest, OffLatticeBeyondOneCentimeter) {
  DatasetManifest m = testing::grid_manifest({{0, 0}, {1, 0}}, 0.2, 64, 32);
  m.records[1].x_m = 0.209;
  EXPECT_TRUE(validate(m, 0.0, false).off_lattice.empty());
  m.records[1].x_m = 0.212;
  EXPECT_EQ(validate(m, 0.0, false).off_lattice.size(), 1u);
}

TEST(Manifest, JsonRoundTrip) {
  DatasetManifest m = testing::grid_manifest({{0, 0}, {3, -2}}, 0.2, 64, 32);
  m.records[0].z_m = 1.1;
  m.records[1].yaw_offset = 0.25;
  const auto text = manifest_to_json(m);
  const auto back = parse_manifest(text);
  EXPECT_EQ(manifest_to_json(back), text);
  EXPECT_EQ(back.records[0].z_m, 1.1);
  EXPECT_FALSE(back.records[1].z_m.has_value());
}

TEST(Validate, PaperCameraPassesTenPxPerDeg) {
  const auto m = testing::grid_manifest({{0, 0}}, 0.2, 5376, 2688);
  const auto r = validate(m, 10.0, false);
  EXPECT_TRUE(r.ok());
  EXPECT_NEAR(r.pano_px_per_deg, 14.93, 0.01);
}

TEST(Validate, AspectViolation) {
  const auto m = testing::grid_manifest({{0, 0}}, 0.2, 1000, 600);
  EXPECT_EQ(validate(m, 1.0, false).aspect_violations.size(), 1u);
}

TEST(Validate, ResolutionBoundaryPasses) {
  const auto m = testing::grid_manifest({{0, 0}}, 0.2, 3600, 1800);
  const auto r = validate(m, 10.0, false);
  EXPECT_TRUE(r.resolution_ok);
  EXPECT_DOUBLE_EQ(r.pano_px_per_deg, 10.0);
  EXPECT_FALSE(validate(m, 10.01, false).resolution_ok);
}

TEST(AngularResolution, Values) {
  EXPECT_NEAR(angular_resolution(5376), 14.9333, 1e-4);
  EXPECT_DOUBLE_EQ(angular_resolution(360), 1.0);
}

std::set<CellCoord> cell_set(const DatasetManifest& m) {
  std::set<CellCoord> out;
  for (const auto& r : m.records) out.insert(m.cell_of(r));
  return out;
}

TEST(Decimate, FactorOneIsIdentity) {
  const auto m = testing::grid_manifest(testing::block(0, 0, 5, 5), 0.2, 64, 32);
  EXPECT_EQ(manifest_to_json(decimate(m, 1)), manifest_to_json(m));
}

TEST(Decimate, PaperGridResolutions) {
  const auto m = testing::grid_manifest(testing::block(0, 0, 11, 11), 0.2, 64, 32);
  EXPECT_NEAR(decimate(m, 5).cell_size_m, 1.0, 1e-12);
  EXPECT_NEAR(decimate(m, 10).cell_size_m, 2.0, 1e-12);
  EXPECT_EQ(decimate(m, 5).records.size(), 9u);
  EXPECT_EQ(decimate(m, 10).records.size(), 4u);
}

TEST(Decimate, ThreeByThreeByTwo) {
  const auto m = testing::grid_manifest(testing::block(0, 0, 3, 3), 0.2, 64, 32);
  const auto d = decimate(m, 2);
  // Original cells with i, j in {0, 2}; in the coarser lattice those are 0 and 1.
  EXPECT_EQ(cell_set(d), (std::set<CellCoord>{{0, 0}, {0, 1}, {1, 0}, {1, 1}}));
  std::set<std::string> ids;
  for (const auto& r : d.records) ids.insert(r.id);
  EXPECT_EQ(ids, (std::set<std::string>{"c0_0", "c0_2", "c2_0", "c2_2"}));
}

TEST(Decimate, EmptiesDataset) {
  const auto m = testing::grid_manifest(testing::block(1, 1, 3, 3), 0.2, 64, 32);
  EXPECT_THROW(decimate(m, 5), DatasetError);
  EXPECT_THROW(decimate(m, 0), std::invalid_argument);
}

TEST(Decimate, ComposesMultiplicatively) {
  const auto m = testing::grid_manifest(testing::block(-7, -5, 24, 19), 0.2, 64, 32);
  for (int a : {1, 2, 3}) {
    for (int b : {1, 2, 4}) {
      EXPECT_EQ(cell_set(decimate(m, a * b)), cell_set(decimate(decimate(m, a), b)))
          << "a=" << a << " b=" << b;
    }
  }
}

TEST(GridIndex, NearestMatchesBruteForce) {
  std::mt19937_64 rng(21);
  std::bernoulli_distribution keep(0.35);
  std::vector<CellCoord> cells;
  for (int i = -4; i < 8; ++i)
    for (int j = -3; j < 6; ++j)
      if (keep(rng)) cells.push_back({i, j});
  const auto m = testing::grid_manifest(cells, 0.2, 64, 32);
  const GridIndex grid(m);
  std::uniform_real_distribution<double> x(-2.0, 2.5);
  std::uniform_int_distribution<int> half(-12, 20);
  for (int k = 0; k < 4000; ++k) {
    // Half the samples sit on cell midlines to exercise ties.
    const double px = (k % 2) ? x(rng) : (half(rng) + 0.5) * 0.2;
    const double py = (k % 4 < 2) ? x(rng) : (half(rng) + 0.5) * 0.2;
    EXPECT_EQ(grid.nearest(px, py), oracle::brute_nearest(cells, px, py, 0.2));
  }
}

TEST(GridIndex, NearestKOrderedAndExcludes) {
  const auto m = testing::grid_manifest(testing::block(0, 0, 5, 5), 0.2, 64, 32);
  const GridIndex grid(m);
  const auto near = grid.nearest_k(0.41, 0.4, 4, CellCoord{2, 2});
  ASSERT_EQ(near.size(), 4u);
  EXPECT_EQ(near[0], (CellCoord{3, 2}));
  // (2,1) and (2,3) tie; the lower j wins.
  EXPECT_EQ(near[1], (CellCoord{2, 1}));
  EXPECT_EQ(near[2], (CellCoord{2, 3}));
  EXPECT_EQ(near[3], (CellCoord{1, 2}));
}

TEST(SynthPano, CornerPixels) {
  const auto p = synth_pano(4, 2);
  EXPECT_EQ(p.image.at(0, 0), (Rgb8{0, 0, 128}));
  EXPECT_EQ(p.image.at(3, 1), (Rgb8{255, 255, 128}));
  EXPECT_THROW(synth_pano(5, 2), std::invalid_argument);
}

TEST(SynthPano, MiddleColumn) {
  for (int h : {2, 8, 100, 1024}) {
    const int w = 2 * h;
    const auto p = synth_pano(w, h);
    const auto want = static_cast<std::uint8_t>(std::lround(255.0 * (w / 2) / (w - 1)));
    for (int v = 0; v < h; ++v) EXPECT_EQ(p.image.at(w / 2, v).r, want);
  }
}

TEST(LoadPanorama, DecodesAndChecksAspect) {
  testing::TempDir dir;
  const auto path = testing::write_dataset(dir.path(), {{0, 0}}, 0.2, 64, 32, true);
  const auto m = load_manifest(path);
  const auto pano = load_panorama(m, m.records[0]);
  EXPECT_EQ(pano.width(), 64);
  EXPECT_EQ(pano.record.id, "c0_0");

  write_image(dir.path() / "imgs" / "c0_0.png", RgbImage(60, 32));
  EXPECT_THROW(load_panorama(m, m.records[0]), ImageError);
}

}  // namespace
}  // namespace panosim
