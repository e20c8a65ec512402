// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include <sstream>
#include <vector>

#include "cstr/cli.hpp"
#include "cstr/io.hpp"

using cstr::Tensor;

// Fingerprints recorded from a reference run; any arithmetic change shows up here.
constexpr std::uint64_t kGoldenInferDisparity = 16059897721560614705ULL;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "cstr");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cstr::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

void write_random_image(const std::filesystem::path& path, std::uint64_t seed, std::size_t h, std::size_t w) {
  cstr::write_pgm(path, test::uniform(seed, {h, w}, 0.0f, 1.0f));
}

}  // namespace

TEST_CASE("init-weights is seeded") {
  test::TempDir dir;
  const auto a = (dir / "a.bin").string(), b = (dir / "b.bin").string(), c = (dir / "c.bin").string();
  const Run ra = cli({"init-weights", "--seed", "3", "--out", a});
  REQUIRE(ra.code == cstr::kExitOk);
  CHECK(contains(ra.out, "seed=3\n"));
  REQUIRE(cli({"init-weights", "--seed", "3", "--out", b}).code == cstr::kExitOk);
  REQUIRE(cli({"init-weights", "--seed", "4", "--out", c}).code == cstr::kExitOk);
  CHECK(cstr::read_file_bytes(a) == cstr::read_file_bytes(b));
  CHECK(cstr::read_file_bytes(a) != cstr::read_file_bytes(c));
  const cstr::WeightStore store = cstr::read_weights(a);
  CHECK(store.contains("layer5.mmp.cross.Wq"));
  CHECK(store.contains("fusion5.conv1.kernel"));
  CHECK(contains(ra.out, "tensors=" + std::to_string(store.size()) + "\n"));

  const auto cfg = (dir / "small.cfg").string();
  cstr::write_file_bytes(cfg, "layers = 2\nchannels = 8\nheads = 2\nseed = 11\n");
  const Run rs = cli({"init-weights", "--config", cfg, "--out", a});
  CHECK(rs.code == cstr::kExitOk);
  CHECK(contains(rs.out, "seed=11\n"));
  CHECK_FALSE(cstr::read_weights(a).contains("layer2.mmp.wax.Wq"));
}

TEST_CASE("infer writes maps and reports statistics") {
  test::TempDir dir;
  const auto w = (dir / "w.bin").string(), l = (dir / "l.pgm").string(), r = (dir / "r.pgm").string();
  const auto disp = (dir / "d.pfm").string(), occ = (dir / "o.pgm").string(), occ_pfm = (dir / "o.pfm").string();
  REQUIRE(cli({"init-weights", "--seed", "0", "--out", w}).code == 0);
  write_random_image(l, 1, 16, 32);
  write_random_image(r, 2, 16, 32);
  const Run run = cli({"infer", "--left", l, "--right", r, "--weights", w, "--out-disp", disp, "--out-occ", occ,
                       "--out-occ-pfm", occ_pfm, "--threads", "2"});
  REQUIRE_MESSAGE(run.code == cstr::kExitOk, run.err);
  for (const char* key : {"height=16\n", "width=32\n", "disp_min=", "disp_max=", "disp_mean=", "occ_mean=",
                          "runtime_s="}) {
    CHECK(contains(run.out, key));
  }
  const Tensor d = cstr::read_pfm(disp);
  CHECK(d.shape() == cstr::Shape{16, 32});
  CHECK(cstr::read_pgm(occ).shape() == cstr::Shape{16, 32});
  CHECK(cstr::fingerprint(d) == kGoldenInferDisparity);

  // Same result from one thread.
  const auto disp1 = (dir / "d1.pfm").string();
  REQUIRE(cli({"infer", "--left", l, "--right", r, "--weights", w, "--out-disp", disp1, "--out-occ", occ}).code == 0);
  CHECK(cstr::read_file_bytes(disp1) == cstr::read_file_bytes(disp));

  // Non-multiple sizes are padded and cropped back.
  write_random_image(l, 3, 10, 18);
  write_random_image(r, 4, 10, 18);
  REQUIRE(cli({"infer", "--left", l, "--right", r, "--weights", w, "--out-disp", disp, "--out-occ", occ}).code == 0);
  CHECK(cstr::read_pfm(disp).shape() == cstr::Shape{10, 18});

  write_random_image(r, 5, 10, 20);
  const Run bad = cli({"infer", "--left", l, "--right", r, "--weights", w, "--out-disp", disp, "--out-occ", occ});
  CHECK(bad.code == cstr::kExitData);
  CHECK(contains(bad.err, "10x18]"));
  CHECK(contains(bad.err, "10x20]"));

  const Run missing = cli({"infer", "--left", (dir / "none.pgm").string(), "--right", r, "--weights", w,
                           "--out-disp", disp, "--out-occ", occ});
  CHECK(missing.code == cstr::kExitData);
}

TEST_CASE("eval prints fixed-point metrics") {
  test::TempDir dir;
  const auto gt = (dir / "gt.pfm").string(), off = (dir / "off.pfm").string();
  const Tensor g = test::uniform(7, {6, 8}, 0.0f, 20.0f);
  cstr::write_pfm(gt, g);
  Tensor shifted = g;
  for (auto& v : shifted.data()) v += 4.0f;
  cstr::write_pfm(off, shifted);

  const Run same = cli({"eval", "--pred", gt, "--gt", gt});
  CHECK(same.code == 0);
  CHECK(same.out == "epe=0.0000\nthree_px=0.0000\npixels=48\n");
  const Run four = cli({"eval", "--pred", off, "--gt", gt});
  CHECK(four.out == "epe=4.0000\nthree_px=100.0000\npixels=48\n");

  // Occluded pixels carry garbage predictions and are skipped.
  Tensor occ({6, 8}), mixed = g;
  for (std::size_t y = 0; y < 6; ++y) {
    for (std::size_t x = 4; x < 8; ++x) {
      occ.at(y, x) = 1.0f;
      mixed.at(y, x) += 50.0f;
    }
  }
  const auto occ_path = (dir / "occ.pgm").string(), mixed_path = (dir / "mixed.pfm").string();
  cstr::write_pgm(occ_path, occ);
  cstr::write_pfm(mixed_path, mixed);
  const Run half = cli({"eval", "--pred", mixed_path, "--gt", gt, "--gt-occ", occ_path, "--pred-occ", occ_path});
  CHECK(half.out == "epe=0.0000\nthree_px=0.0000\nocc_iou=1.0000\npixels=24\n");

  cstr::write_pgm(occ_path, Tensor({6, 8}, 1.0f));
  CHECK(cli({"eval", "--pred", gt, "--gt", gt, "--gt-occ", occ_path}).code == cstr::kExitData);
  cstr::write_pfm(off, Tensor({6, 7}));
  CHECK(cli({"eval", "--pred", off, "--gt", gt}).code == cstr::kExitData);
  cstr::write_file_bytes(off, "P5\n1 1\n255\n\x01");
  CHECK(cli({"eval", "--pred", off, "--gt", gt}).code == cstr::kExitData);
}

TEST_CASE("usage errors") {
  CHECK(cli({}).code == cstr::kExitUsage);
  CHECK(cli({"frobnicate"}).code == cstr::kExitUsage);
  CHECK(cli({"infer", "--left", "x.pgm"}).code == cstr::kExitUsage);
  CHECK(cli({"eval", "--pred", "a", "--gt", "b", "--pred-occ", "c"}).code == cstr::kExitUsage);
  CHECK(cli({"init-weights", "--out", "w.bin", "--seed", "abc"}).code == cstr::kExitUsage);
  CHECK(cli({"selftest", "--threads", "1"}).code == cstr::kExitUsage);
  const Run help = cli({"--help"});
  CHECK(help.code == cstr::kExitOk);
  CHECK(contains(help.out, "infer"));
}

TEST_CASE("selftest exit codes") {
  const Run ok = cli({"selftest"});
  CHECK_MESSAGE(ok.code == cstr::kExitOk, ok.out);
  CHECK(contains(ok.out, "failed=0\n"));
  const Run bad = cli({"selftest", "--corrupt-softmax"});
  CHECK(bad.code == cstr::kExitSelftest);
  CHECK(contains(bad.out, "FAIL softmax_normalization"));
}
