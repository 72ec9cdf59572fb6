#include <doctest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>

#include <json.hpp>

#include "falcon/datagen.hpp"
#include "falcon/image.hpp"
#include "falcon/splats.hpp"

using namespace falcon;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run run(const std::string& args) {
  const std::string cmd = std::string(FALCON_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p != nullptr);
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path scratch() {
  static const fs::path d = [] {
    const fs::path p = fs::temp_directory_path() / "falcon_cli_test";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("help documents commands and flags") {
  const Run r = run("--help");
  CHECK(r.code == 0);
  for (const char* cmd : {"gen-asset", "label", "train", "eval", "infer", "serve", "pipeline"})
    CHECK(r.out.find(cmd) != std::string::npos);
  const Run sub = run("pipeline --help");
  CHECK(sub.code == 0);
  for (const char* flag : {"--count", "--seed", "--out", "--stage1-epochs", "--empty-fraction", "--no-pnp"})
    CHECK(sub.out.find(flag) != std::string::npos);
}

TEST_CASE("config errors exit with code 2") {
  CHECK(run("gen-asset --archetype car --out x.splat --bogus").code == 2);
  CHECK(run("gen-asset --archetype boat --out " + q(scratch() / "b.splat")).code == 2);
  CHECK(run("gen-asset --out " + q(scratch() / "b.splat")).code == 2);
  CHECK(run("nosuchcommand").code == 2);
  CHECK(run("label --object car --count 2 --empty-fraction 3 --out " + q(scratch() / "bad")).code == 2);
}

TEST_CASE("I/O errors exit with code 3") {
  CHECK(run("infer --model /nonexistent/m.fapm --image /nonexistent/x.ppm").code == 3);
  const fs::path junk = scratch() / "junk.fapm";
  write_file(junk, std::vector<std::uint8_t>{'N', 'O', 'P', 'E', 1, 0, 0});
  const Run r = run("infer --model " + q(junk) + " --image x.ppm");
  CHECK(r.code == 3);
  CHECK(r.out.find("NOPE") != std::string::npos);
}

TEST_CASE("gen-asset writes a loadable asset and sidecar") {
  const fs::path out = scratch() / "lamp.splat";
  const Run r = run("gen-asset --archetype lamp --seed 1 --out " + q(out));
  REQUIRE(r.code == 0);
  CHECK(fs::exists(scratch() / "lamp.json"));
  const SplatAsset a = load_splat(out);
  CHECK(a.symmetry() == Symmetry::rotational_z);
  CHECK(a.splats().size() == generate_archetype(Archetype::lamp, 1).splats().size());
  CHECK(run("gen-asset --env 1 --out " + q(scratch() / "room.splat")).code == 0);
}

TEST_CASE("label, train, eval and infer chain") {
  const fs::path d = scratch();
  const std::string common = " --object car --width 64 --height 64 --empty-fraction 0.2";
  REQUIRE(run("label" + common + " --count 8 --seed 1 --out " + q(d / "train")).code == 0);
  REQUIRE(run("label" + common + " --count 8 --seed 1 --out " + q(d / "train2")).code == 0);
  REQUIRE(run("label" + common + " --count 6 --seed 2 --out " + q(d / "test")).code == 0);
  CHECK(read_file(d / "train" / kManifestName) == read_file(d / "train2" / kManifestName));

  const Run tr = run("train --data " + q(d / "train") + " --out " + q(d / "m.fapm") +
                     " --stage1-epochs 1 --stage2-epochs 1 --reproj-every 4 --seed 5 --report " + q(d / "train.json"));
  REQUIRE(tr.code == 0);
  CHECK(fs::exists(d / "train.json"));
  REQUIRE(run("train --data " + q(d / "train") + " --out " + q(d / "m2.fapm") +
              " --stage1-epochs 1 --stage2-epochs 1 --reproj-every 4 --seed 5")
              .code == 0);
  CHECK(read_file(d / "m.fapm") == read_file(d / "m2.fapm"));

  const Run ev = run("eval --model " + q(d / "m.fapm") + " --data " + q(d / "test") + " --baseline pnp --report " +
                     q(d / "r.md") + " --csv " + q(d / "r.csv") + " --train-data " + q(d / "train"));
  REQUIRE(ev.code == 0);
  const auto md = read_file(d / "r.md");
  const std::string table(md.begin(), md.end());
  CHECK(table.find("| PnP |  |") != std::string::npos);
  CHECK(table.find("| FalconApp | 0.") != std::string::npos);
  const auto csv = read_file(d / "r.csv");
  CHECK(std::string(csv.begin(), csv.end()).find(",PnP,,") != std::string::npos);

  // A test set that overlaps the training set is refused.
  CHECK(run("eval --model " + q(d / "m.fapm") + " --data " + q(d / "train") + " --train-data " + q(d / "train2"))
            .code == 2);

  const Manifest m = load_manifest(d / "test");
  const Run inf = run("infer --model " + q(d / "m.fapm") + " --image " + q(d / "test" / m.frames[0].rgb) +
                      " --mask-out " + q(d / "mask.pgm"));
  REQUIRE(inf.code == 0);
  CHECK(inf.out.find("\"in_view\"") != std::string::npos);
  CHECK(read_pnm(d / "mask.pgm").width == 64);
}

TEST_CASE("pipeline writes a RunReport") {
  const fs::path d = scratch() / "run";
  const Run r = run("pipeline --archetype quadrotor --count 8 --test-count 4 --width 64 --height 64 "
                    "--stage1-epochs 1 --stage2-epochs 0 --seed 3 --out " + q(d));
  REQUIRE(r.code == 0);
  for (const char* f : {"report.json", "report.txt", "model.fapm", "eval.md", "eval.csv", "data/manifest.json",
                        "test/manifest.json"})
    CHECK(fs::exists(d / f));
  const auto bytes = read_file(d / "report.json");
  const auto j = nlohmann::json::parse(bytes.begin(), bytes.end());
  CHECK(j["frames"]["train"] == 8);
  CHECK(j["frames"]["test"] == 4);
  for (const char* k : {"asset", "labeling", "training", "evaluation", "labeling_plus_training", "total"})
    CHECK(j["timings_s"][k].get<double>() >= 0.0);
  CHECK(j["config"]["seed"] == 3);
}
