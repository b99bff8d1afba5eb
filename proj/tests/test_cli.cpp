#include <array>
#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include "doctest.h"

#include "dgenn/config.hpp"
#include "support.hpp"

namespace ts = testsupport;

namespace {

struct Run {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

Run run(const std::string& args) {
  const std::string cmd = std::string(DGENN_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::size_t n = std::fread(buf.data(), 1, buf.size(), pipe)) r.output.append(buf.data(), n);
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::filesystem::path small_config(const std::filesystem::path& dir) {
  dgenn::RunConfig c;
  c.synth.users = 60;
  c.synth.items = 50;
  c.similarity.k = 5;
  c.sampling.n_neg = 2;
  c.model.embedding_dim = 4;
  c.model.mlp = {8, 1};
  c.model.epochs = 2;
  c.model.batch_size = 128;
  c.model.log_wall_time = false;
  const auto path = dir / "config.json";
  std::ofstream(path) << c.to_json().dump(2);
  return path;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("grad-check passes on the builtin fixture") {
  const auto r = run("grad-check");
  INFO(r.output);
  CHECK(r.code == 0);
  const auto j = nlohmann::json::parse(r.output);
  CHECK(j["max_rel_error"].get<double>() < 1e-4);
  CHECK(j["pass"] == true);
}

TEST_CASE("eval before train reports a missing checkpoint") {
  const auto dir = ts::scratch_dir("cli_missing");
  const auto r = run("--out " + dir.string() + " eval");
  INFO(r.output);
  CHECK(r.code == 3);
  CHECK(r.output.find("checkpoint not found") != std::string::npos);
  const auto err = nlohmann::json::parse(r.output);
  CHECK(err["error"] == "missing_artifact");
}

TEST_CASE("invalid configs exit with status 2 and name the field") {
  const auto dir = ts::scratch_dir("cli_bad");
  auto j = dgenn::RunConfig{}.to_json();
  j["model"]["embeding_dim"] = 8;
  std::ofstream(dir / "typo.json") << j.dump();
  auto r = run("--config " + (dir / "typo.json").string() + " --out " + dir.string() + " synth");
  CHECK(r.code == 2);
  CHECK(r.output.find("embeding_dim") != std::string::npos);

  j = dgenn::RunConfig{}.to_json();
  j["synth"]["noise"] = 0.7;
  std::ofstream(dir / "range.json") << j.dump();
  r = run("--config " + (dir / "range.json").string() + " --out " + dir.string() + " synth");
  CHECK(r.code == 2);
  CHECK(r.output.find("noise") != std::string::npos);

  std::ofstream(dir / "broken.json") << "{ not json";
  r = run("--config " + (dir / "broken.json").string() + " synth");
  CHECK(r.code == 2);

  CHECK(run("no-such-command").code == 2);
  CHECK(run("--out " + dir.string() + " train --ablate sideways").code != 0);
}

TEST_CASE("synth, ingest, build-graphs, train, eval and friends") {
  const auto dir = ts::scratch_dir("cli_pipeline");
  const auto cfg = small_config(dir);
  const std::string base = "--config " + cfg.string() + " --out " + (dir / "out").string() + " ";
  for (const char* step : {"synth", "ingest", "build-graphs", "train --ablate none", "eval", "slice-report",
                           "dump-embeddings", "graphs-stats"}) {
    const auto r = run(base + step);
    INFO(step, "\n", r.output);
    REQUIRE(r.code == 0);
  }
  const auto report = nlohmann::json::parse(slurp(dir / "out" / "eval.json"));
  CHECK(report.contains("auc"));
  CHECK(report["n_pos"].get<int>() > 0);
  CHECK(report["ablation"] == "none");
  CHECK(slurp(dir / "out" / "slices.tsv").rfind("model\tkind\tbucket", 0) == 0);
  CHECK(std::filesystem::exists(dir / "out" / "embeddings.bin"));
  CHECK(std::filesystem::exists(dir / "out" / "graph_stats.json"));

  // Rerunning with the same config and seed reproduces the artifacts.
  const auto first_ckpt = slurp(dir / "out" / "checkpoint.bin");
  const auto first_log = slurp(dir / "out" / "metrics.jsonl");
  REQUIRE(run(base + "train --ablate none").code == 0);
  CHECK(slurp(dir / "out" / "checkpoint.bin") == first_ckpt);
  CHECK(slurp(dir / "out" / "metrics.jsonl") == first_log);

  REQUIRE(run(base + "train --base-only").code == 0);
  REQUIRE(run(base + "eval").code == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "out" / "eval.json"))["ablation"] == "base-only");
}
