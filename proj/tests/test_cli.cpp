#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <string>

#ifndef ASNET_CLI_PATH
#error "ASNET_CLI_PATH must name the asnet executable"
#endif

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

CliRun run(const std::string& args) {
  const std::string cmd = std::string(ASNET_CLI_PATH) + " " + args + " 2>&1";
  CliRun r;
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), pipe)) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("asnet_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(Cli, HelpListsSubcommandsAndFlags) {
  const CliRun r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"simulate", "fold", "das", "train", "eval", "complexity", "render"})
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  const CliRun s = run("simulate --help");
  EXPECT_EQ(s.code, 0);
  for (const char* flag : {"--seed", "--out", "--threads", "--deterministic", "--paper-scale", "--n"})
    EXPECT_NE(s.out.find(flag), std::string::npos) << flag;
}

TEST(Cli, UnknownFlagSuggestsNearest) {
  const CliRun r = run("simulate --sed 3 --out x");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("--seed"), std::string::npos) << r.out;
}

TEST(Cli, UnknownSubcommandIsUsageError) {
  const CliRun r = run("simulat --out x");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("simulate"), std::string::npos) << r.out;
}

TEST(Cli, MissingInputNamesPath) {
  const fs::path dir = temp_dir("missing");
  const CliRun r = run("fold --in " + (dir / "nope.f32").string() + " --m 768 --n 32 --out " + dir.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("nope.f32"), std::string::npos) << r.out;
}

TEST(Cli, SimulateFoldDasRender) {
  const fs::path dir = temp_dir("pipeline");
  const fs::path data = dir / "data";
  CliRun r = run("simulate --n 2 --points 1500 --seed 1 --out " + data.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(data / "manifest.json"));

  r = run("fold --in " + (data / "sig_00000.f32").string() + " --m 1500 --n 32 --side 128 --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(fs::file_size(dir / "sig_00000.folded.f32"), 12u * 128 * 128 * 4);
  EXPECT_NE(r.out.find("12"), std::string::npos) << r.out;

  r = run("das --data " + data.string() + " --index 1 --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(fs::file_size(dir / "das_00001.f32"), 64u * 64 * 4);

  r = run("render --in " + (dir / "das_00001.f32").string() + " --side 64 --out " + (dir / "img").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(dir / "img" / "das_00001.pgm"));
}

TEST(Cli, RejectsBadValues) {
  const fs::path dir = temp_dir("bad");
  EXPECT_EQ(run("simulate --n 2 --elements 0 --out " + dir.string()).code, 1);
  EXPECT_EQ(run("train --data " + dir.string() + " --ablation no_gc --out " + dir.string()).code, 1);
}

TEST(Cli, DasFromSignalFileAndGeometry) {
  const fs::path dir = temp_dir("das_in");
  ASSERT_EQ(run("simulate --n 1 --seed 2 --out " + (dir / "d").string()).code, 0);
  const CliRun r = run("das --in " + (dir / "d" / "sig_00000.f32").string() + " --geometry " +
                    (dir / "d" / "manifest.json").string() + " --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(fs::file_size(dir / "sig_00000.das.f32"), 64u * 64 * 4);
  // Same pixels as the dataset mode.
  ASSERT_EQ(run("das --data " + (dir / "d").string() + " --out " + dir.string()).code, 0);
  EXPECT_EQ(fs::file_size(dir / "das_00000.f32"), fs::file_size(dir / "sig_00000.das.f32"));
  EXPECT_EQ(run("das --in " + (dir / "d" / "sig_00000.f32").string() + " --out " + dir.string()).code, 2);
}
