#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "softsense/binio.hpp"
#include "softsense/dataset.hpp"
#include "softsense/models.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace softsense;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / "softsense_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

struct Run {
  int code;
  std::string err;
};

Run cli(const std::string& args) {
  const auto err = path("stderr.txt");
  const std::string cmd = "cd " + workdir().string() + " && " + SOFTSENSE_CLI + " " + args + " > /dev/null 2> " + err;
  const int status = std::system(cmd.c_str());
  std::ifstream in(err);
  std::stringstream text;
  text << in.rdbuf();
  return {WEXITSTATUS(status), text.str()};
}

json manifest(const std::string& artifact) {
  std::ifstream in(path(artifact + ".manifest.json"));
  REQUIRE(in.good());
  return json::parse(in);
}

std::string join(const json& argv) {
  std::string out = SOFTSENSE_CLI;
  for (std::size_t i = 1; i < argv.size(); ++i) out += " " + argv[i].get<std::string>();
  return out;
}

}  // namespace

TEST_CASE("simulate: flag arithmetic, manifest and write-once") {
  REQUIRE(cli("simulate --commands 10 --no-vision --seed 3 --out nv.ssd").code == 0);
  const auto ds = data::load(path("nv.ssd"));
  CHECK(ds.samples.size() == 100);
  CHECK(!ds.has_vision);
  const auto m = manifest("nv.ssd");
  CHECK(m["subcommand"] == "simulate");
  CHECK(m["flags"]["commands"] == 10);
  CHECK(m["flags"]["vision"] == false);
  CHECK(m["seeds"]["seed"] == 3);
  CHECK(m["seeds"]["source"] == "flag");
  CHECK(m["config_digest"].get<std::string>().rfind("crc32:", 0) == 0);

  const auto before = binio::read_file(path("nv.ssd"));
  const auto again = cli("simulate --commands 10 --no-vision --seed 3 --out nv.ssd");
  CHECK(again.code == 1);
  CHECK(again.err.find("nv.ssd") != std::string::npos);
  CHECK(binio::read_file(path("nv.ssd")) == before);
}

TEST_CASE("simulate: same flags and seed give identical files; the manifest command reproduces them") {
  REQUIRE(cli("simulate --commands 6 --scenario cluttered --seed 11 --out a.ssd").code == 0);
  REQUIRE(cli("simulate --commands 6 --scenario cluttered --seed 11 --out b.ssd").code == 0);
  CHECK(binio::read_file(path("a.ssd")) == binio::read_file(path("b.ssd")));

  auto argv = manifest("a.ssd")["command"];
  argv.back() = "replay.ssd";
  REQUIRE(cli(join(argv).substr(std::string(SOFTSENSE_CLI).size())).code == 0);
  CHECK(binio::read_file(path("replay.ssd")) == binio::read_file(path("a.ssd")));
}

TEST_CASE("seed falls back to SOFTSENSE_SEED, and a bad value is a usage error") {
  setenv("SOFTSENSE_SEED", "11", 1);
  REQUIRE(cli("simulate --commands 6 --scenario cluttered --out env.ssd").code == 0);
  unsetenv("SOFTSENSE_SEED");
  CHECK(manifest("env.ssd")["seeds"]["source"] == "SOFTSENSE_SEED");
  CHECK(binio::read_file(path("env.ssd")) == binio::read_file(path("a.ssd")));
  setenv("SOFTSENSE_SEED", "eleven", 1);
  CHECK(cli("simulate --commands 2 --out bad.ssd").code == 1);
  unsetenv("SOFTSENSE_SEED");
  CHECK(!fs::exists(path("bad.ssd")));
}

TEST_CASE("train: history rows, default hyperparameters and latent sets") {
  REQUIRE(cli("simulate --commands 10 --seed 2 --out v.ssd").code == 0);
  REQUIRE(cli("train --arch p1 --latent 4 --data v.ssd --epochs 20 --seed 1 --out m.ssm").code == 0);
  std::ifstream csv(path("m.ssm.history.csv"));
  int lines = 0;
  for (std::string line; std::getline(csv, line);) ++lines;
  CHECK(lines == 21);
  CHECK(models::FusionModel::load(path("m.ssm")).arch().latent == 4);

  REQUIRE(cli("train --arch p1 --latent 2 --data v.ssd --out d.ssm").code == 0);
  const auto m = manifest("d.ssm");
  CHECK(m["flags"]["lr"] == 1e-3);
  CHECK(m["flags"]["batch"] == 1024);
  CHECK(m["flags"]["epochs"] == 200);
  CHECK(m["inputs"].contains("v.ssd"));

  const auto desk = cli("--preset desk train --arch p1 --latent 2 --data v.ssd --epochs 1 --out desk.ssm");
  REQUIRE(desk.code == 0);
  CHECK(manifest("desk.ssm")["flags"]["batch"] == 256);

  const auto bad = cli("train --arch p1 --latent 5 --data v.ssd --out bad.ssm");
  CHECK(bad.code == 1);
  CHECK(bad.err.find("2, 4, 16") != std::string::npos);
  CHECK(cli("train --arch p1 --latent 5 --allow-any-latent --data v.ssd --epochs 1 --out any.ssm").code == 0);
  CHECK(cli("train --arch p2 --latent 16 --data nv.ssd --epochs 1 --out p2nv.ssm").code == 1);
}

TEST_CASE("eval, render and missing artifacts") {
  REQUIRE(cli("eval --model m.ssm --data v.ssd --out r.csv").code == 0);
  std::ifstream csv(path("r.csv"));
  std::string header, row;
  std::getline(csv, header);
  std::getline(csv, row);
  CHECK(header.rfind("scenario,variant,latent", 0) == 0);
  CHECK(row.rfind("empty,P1,4,", 0) == 0);
  CHECK(manifest("r.csv")["inputs"].size() == 2);

  REQUIRE(cli("render --data v.ssd --index 0 --out f.ppm").code == 0);
  const auto ppm = binio::read_file(path("f.ppm"));
  const std::string head = "P6\n64 64\n255\n";
  CHECK(std::string(ppm.begin(), ppm.begin() + head.size()) == head);
  CHECK(ppm.size() == head.size() + 64 * 64 * 3);
  CHECK(cli("render --data v.ssd --index 100 --out g.ppm").code == 1);
  CHECK(cli("render --data nv.ssd --index 0 --out h.ppm").code == 1);

  const auto missing = cli("eval --model nowhere.ssm --data v.ssd --out r2.csv");
  CHECK(missing.code == 2);
  CHECK(missing.err.find("nowhere.ssm") != std::string::npos);
  CHECK(cli("frobnicate").code == 1);
  CHECK(cli("simulate --commands 3").code == 1);
}

TEST_CASE("flow: identical consecutive frames give a mid-gray reference") {
  data::Dataset ds;
  ds.has_vision = true;
  for (int i = 0; i < 4; ++i) {
    data::Sample s;
    s.index = i;
    s.action = {3.0f, -0.5f, 0.5f};
    render::FrameBytes f;
    for (int k = 0; k < render::kPixels; ++k) f[k] = static_cast<std::uint8_t>(k * 13);
    s.frame = f;
    ds.samples.push_back(s);
  }
  ds.stats = data::compute_norm_stats(ds);
  data::save(ds, path("still.ssd"));
  models::ArchSpec arch;
  arch.variant = models::Variant::P2;
  arch.latent = 16;
  models::FusionModel::build(arch, ds.stats, 1).save(path("p2.ssm"));

  REQUIRE(cli("flow --model p2.ssm --data still.ssd --index 1 --out flow.ppm").code == 0);
  const auto ppm = binio::read_file(path("flow.ppm"));
  const std::string head = "P6\n192 64\n255\n";
  REQUIRE(std::string(ppm.begin(), ppm.begin() + head.size()) == head);
  for (int y = 0; y < 64; ++y) {
    for (int x = 64; x < 128; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int v = ppm[head.size() + (y * 192 + x) * 3 + c];
        REQUIRE((v == 127 || v == 128));
      }
    }
  }
  CHECK(cli("flow --model m.ssm --data v.ssd --index 1 --out p1flow.ppm").code == 1);
  CHECK(cli("flow --model p2.ssm --data still.ssd --index 3 --out last.ppm").code == 1);
}

TEST_CASE("sweep: run directory carries one manifest and the reports") {
  REQUIRE(cli("simulate --commands 20 --seed 4 --out sw.ssd").code == 0);
  REQUIRE(cli("sweep --data sw.ssd --epochs 1 --batch 64 --no-recon --flow-examples 1 --seed 4 --out runs").code == 0);
  int dirs = 0;
  for (const auto& e : fs::directory_iterator(workdir() / "runs")) {
    ++dirs;
    CHECK(e.path().filename().string().find("_seed4") != std::string::npos);
    CHECK(fs::exists(e.path() / "reports.csv"));
    CHECK(fs::exists(e.path() / "summary.txt"));
    std::ifstream in(e.path() / "manifest.json");
    const auto m = json::parse(in);
    CHECK(m["subcommand"] == "sweep");
    CHECK(m["flags"]["recon"] == false);
    int manifests = 0;
    for (const auto& f : fs::recursive_directory_iterator(e.path())) manifests += f.path().filename() == "manifest.json";
    CHECK(manifests == 1);
  }
  CHECK(dirs == 1);
}
