#include <gtest/gtest.h>
#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <thread>

#include "meshforge/fixtures.hpp"
#include "meshforge/image_io.hpp"
#include "meshforge/mesh_io.hpp"
#include "meshforge/remote_scorer.hpp"
#include "test_support.hpp"

using namespace meshforge;
using meshforge::testing::read_file;
using meshforge::testing::TempDir;

namespace {

const std::filesystem::path fixtures = MESHFORGE_FIXTURES;

struct CliRun {
  int code = -1;
  std::string out, err;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

CliRun cli(const std::vector<std::string>& args, const std::string& env = "env -u MESHFORGE_SCORER_URL") {
  static TempDir logs;
  static int n = 0;
  const auto out = logs / ("out" + std::to_string(n)), err = logs / ("err" + std::to_string(n));
  ++n;
  std::string cmd = env + " " + quote(MESHFORGE_CLI);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " >" + quote(out.string()) + " 2>" + quote(err.string());
  const int status = std::system(cmd.c_str());
  CliRun r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

std::vector<std::string> small_generate(const std::filesystem::path& out) {
  return {"generate", "--scorer", "target:" + (fixtures / "ellipsoid").string(), "--iters", "6", "--level", "1",
          "--depth", "1", "--texture-size", "16", "--select-views", "2", "--views", "2", "--seed", "3",
          "--out", out.string()};
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"bogus"}).code, 2);
  EXPECT_EQ(cli({"generate", "--no-such-flag"}).code, 2);
  TempDir dir;
  const CliRun missing = cli({"generate", "--out", (dir / "o").string()});
  EXPECT_EQ(missing.code, 2);
  EXPECT_NE(missing.err.find("no scorer"), std::string::npos);
  EXPECT_EQ(cli({"generate", "--scorer", "magic:x"}).code, 2);
  EXPECT_EQ(cli({"generate", "--scorer", "target:" + (dir / "none").string()}).code, 2);
  EXPECT_EQ(cli({"generate", "--scorer", "target:" + (fixtures / "ellipsoid").string(), "--res", "32"}).code, 2);
  EXPECT_EQ(cli({"generate", "--scorer", "remote:http://127.0.0.1:1"}).code, 2);  // no prompt
  EXPECT_EQ(cli({"generate", "--scorer", "target:" + (fixtures / "ellipsoid").string(), "--primitive", "cone"}).code, 2);
  EXPECT_EQ(cli({"generate", "--scorer", "target:" + (fixtures / "ellipsoid").string(), "--texture-size", "100",
                 "--iters", "1", "--out", (dir / "t").string()})
                .code,
            2);
}

TEST(Cli, GenerateOnTheFixtureTargets) {
  TempDir dir;
  const CliRun r = cli({"generate", "--scorer", "target:" + (fixtures / "ellipsoid").string(), "--iters", "300", "--res",
                        "64", "--out", dir.path().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"model.obj", "texture.png", "normal.png", "loss.csv", "config.ini", "run_config.json", "checkpoint.bin"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  EXPECT_NE(r.out.find("target mse"), std::string::npos);
  EXPECT_NO_THROW(load_assets(dir.path()));
}

TEST(Cli, AblationFlagsAreRecorded) {
  TempDir dir;
  auto args = small_generate(dir / "a");
  args.insert(args.end(), {"--no-bg-aug", "--no-fov-aug", "--no-offset-aug"});
  const CliRun r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string snap = read_file(dir / "a" / "config.ini");
  for (const char* key : {"no-bg-aug=true", "no-fov-aug=true", "no-offset-aug=true"})
    EXPECT_NE(snap.find(key), std::string::npos) << key << "\n" << snap;
  const auto meta = nlohmann::json::parse(read_file(dir / "a" / "run_config.json"));
  EXPECT_EQ(meta["bg_aug"], false);
  EXPECT_EQ(meta["fov_aug"], false);
  EXPECT_EQ(meta["offset_aug"], false);
  EXPECT_EQ(meta["seed"], 3);
}

TEST(Cli, ConfigSnapshotReproducesTheRun) {
  TempDir dir;
  ASSERT_EQ(cli(small_generate(dir / "a")).code, 0);
  std::filesystem::copy_file(dir / "a" / "config.ini", dir / "snap.ini");
  const CliRun again = cli({"--config", (dir / "snap.ini").string(), "generate", "--out", (dir / "b").string()});
  ASSERT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(read_file(dir / "a" / "loss.csv"), read_file(dir / "b" / "loss.csv"));
  EXPECT_EQ(read_file(dir / "a" / "model.obj"), read_file(dir / "b" / "model.obj"));

  // flags win over the file
  const CliRun other = cli({"--config", (dir / "snap.ini").string(), "generate", "--seed", "4", "--out", (dir / "c").string()});
  ASSERT_EQ(other.code, 0) << other.err;
  EXPECT_NE(read_file(dir / "a" / "loss.csv"), read_file(dir / "c" / "loss.csv"));
  EXPECT_EQ(nlohmann::json::parse(read_file(dir / "c" / "run_config.json"))["seed"], 4);
}

TEST(Cli, SameSeedSameLog) {
  TempDir dir;
  ASSERT_EQ(cli(small_generate(dir / "a")).code, 0);
  ASSERT_EQ(cli(small_generate(dir / "b")).code, 0);
  EXPECT_EQ(read_file(dir / "a" / "loss.csv"), read_file(dir / "b" / "loss.csv"));
}

TEST(Cli, ResumeFromCheckpoint) {
  TempDir dir;
  ASSERT_EQ(cli(small_generate(dir / "a")).code, 0);
  auto args = small_generate(dir / "a");
  *std::next(std::find(args.begin(), args.end(), "--iters")) = "8";
  args.insert(args.end(), {"--resume", (dir / "a" / "checkpoint.bin").string()});
  const CliRun r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string log = read_file(dir / "a" / "loss.csv");
  EXPECT_NE(log.find("\n8,"), std::string::npos);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 9);
}

TEST(Cli, RenderMatchesGolden) {
  TempDir dir;
  const CliRun r = cli({"render", "--model", (fixtures / "asset").string(), "--azimuth", "0", "--elevation", "15", "--fov",
                        "45", "--res", "128", "--out", (dir / "r.png").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Rgb8Image got = read_png(dir / "r.png"), golden = read_png(fixtures / "asset_golden.png");
  ASSERT_EQ(got.width, golden.width);
  ASSERT_EQ(got.pixels.size(), golden.pixels.size());
  int worst = 0;
  for (std::size_t i = 0; i < got.pixels.size(); ++i) worst = std::max(worst, std::abs(int(got.pixels[i]) - int(golden.pixels[i])));
  EXPECT_LE(worst, 2);
}

TEST(Cli, RenderAlphaOnly) {
  TempDir dir;
  ASSERT_EQ(cli({"render", "--model", (fixtures / "asset").string(), "--res", "64", "--alpha-only", "--out",
                 (dir / "a.png").string()})
                .code,
            0);
  const Rgb8Image a = read_png(dir / "a.png");
  EXPECT_EQ(a.channels, 1);
  EXPECT_EQ(a.pixels[0], 0);                        // corner is background
  EXPECT_EQ(a.pixels[32 * 64 + 32], 255);           // centre is covered
}

TEST(Cli, RenderErrors) {
  TempDir dir;
  const auto model = (fixtures / "asset").string(), out = (dir / "x.png").string();
  EXPECT_EQ(cli({"render", "--model", model, "--elevation", "101", "--out", out}).code, 2);
  EXPECT_EQ(cli({"render", "--model", model, "--elevation", "-1", "--out", out}).code, 2);
  EXPECT_EQ(cli({"render", "--model", (dir / "nothing").string(), "--out", out}).code, 2);
  EXPECT_EQ(cli({"render", "--model", model}).code, 2);
  EXPECT_EQ(cli({"render", "--model", model, "--elevation", "100", "--out", out}).code, 0);
}

TEST(Cli, GradcheckSmall) {
  const auto t0 = std::chrono::steady_clock::now();
  const CliRun r = cli({"gradcheck", "small"});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_LT(secs, 60.0);
  for (const char* c : {"subdivision", "laplacian", "texture", "vertices", "objective"})
    EXPECT_NE(r.out.find(c), std::string::npos) << c;
}

TEST(Cli, GradcheckFaultInjectionNamesTheComponent) {
  const CliRun r = cli({"gradcheck", "small", "--inject-fault", "laplacian"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("laplacian"), std::string::npos) << r.err;
  EXPECT_EQ(r.err.find("texture"), std::string::npos) << r.err;
  EXPECT_EQ(cli({"gradcheck", "small", "--inject-fault", "nonsense"}).code, 2);
  EXPECT_EQ(cli({"gradcheck", "huge"}).code, 2);
}

TEST(Cli, GradcheckSeedIsDeterministic) {
  const CliRun a = cli({"gradcheck", "small", "--seed", "7"}), b = cli({"gradcheck", "small", "--seed", "7"});
  EXPECT_EQ(a.code, 0);
  EXPECT_EQ(a.out, b.out);
}

TEST(Cli, SelectPrimitivePrintsATable) {
  const CliRun r = cli({"select-primitive", "--scorer", "target:" + (fixtures / "ellipsoid").string(), "--level", "1",
                        "--depth", "1", "--select-views", "4"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* name : {"sphere", "cuboid_horizontal", "cuboid_vertical"}) EXPECT_NE(r.out.find(name), std::string::npos);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '*'), 1);
}

TEST(Cli, RemoteScorerFromEnvironmentEndToEnd) {
  // echo-style service: loss = mean pixel value
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/score", [&](const httplib::Request& req, httplib::Response& res) {
    ++hits;
    const auto body = nlohmann::json::parse(req.body);
    nlohmann::json out{{"similarities", nlohmann::json::array()}, {"grads", nlohmann::json::array()}};
    double loss = 0;
    const double k = double(body["images"].size());
    for (const auto& img : body["images"]) {
      const auto px = decode_float32_le(img.get<std::string>());
      double s = 0;
      for (double x : px) s += x;
      loss += s / double(px.size()) / k;
      out["similarities"].push_back(0.0);
      out["grads"].push_back(encode_float32_le(std::vector<double>(px.size(), 1.0 / (double(px.size()) * k))));
    }
    out["loss"] = loss;
    res.set_content(out.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  TempDir dir;
  const std::string env = "MESHFORGE_SCORER_URL=http://127.0.0.1:" + std::to_string(port);
  const CliRun r = cli({"generate", "--prompt", "a red chair", "--iters", "3", "--res", "32", "--level", "1", "--depth", "1",
                        "--texture-size", "16", "--select-views", "2", "--out", (dir / "o").string()},
                       "env " + env);
  server.stop();
  th.join();
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_GE(hits.load(), 4);  // selection plus three iterations
  EXPECT_TRUE(std::filesystem::exists(dir / "o" / "model.obj"));
}

TEST(Cli, UnreachableRemoteScorerIsARuntimeFailure) {
  const int port = meshforge::testing::closed_port();
  TempDir dir;
  const CliRun r = cli({"generate", "--scorer", "remote:http://127.0.0.1:" + std::to_string(port), "--prompt", "p",
                        "--iters", "1", "--res", "16", "--level", "0", "--depth", "0", "--texture-size", "16", "--out",
                        (dir / "o").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("failed after"), std::string::npos) << r.err;
}
