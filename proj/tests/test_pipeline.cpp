/*
 * Copyright 2026 The Kanji Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "kanji/bench.hpp"
#include "kanji/pipeline.hpp"

using namespace kanji;
namespace fs = std::filesystem;

namespace {

std::string scratch(const std::string& leaf) {
  std::string dir = (fs::temp_directory_path() / "kanji_pipeline_tests" / leaf).string();
  fs::create_directories(dir);
  return dir;
}

std::string manifest_dir() {
#ifdef KANJI_MANIFEST_DIR
  return KANJI_MANIFEST_DIR;
#else
  return "manifests";
#endif
}

PipelineConfig tiny_config(const std::string& out) {
  PipelineConfig cfg;
  cfg.manifest_path = manifest_dir() + "/cifar10_small.manifest";
  SynthDataConfig s;
  s.train_n = 160;
  s.test_n = 64;
  s.noise = 1.0;
  cfg.synth = s;
  cfg.seed = 3;
  cfg.epochs = 1;
  cfg.batch_size = 32;
  cfg.optimizer.kind = OptimizerKind::Adam;
  cfg.optimizer.lr.initial = 1e-3;
  cfg.validate_samples = 5;
  cfg.out_dir = out;
  return cfg;
}

} // namespace

TEST_CASE("pipeline: kanji run produces all artifacts and validates") {
  std::string out = scratch("kanji_full");
  PipelineConfig cfg = tiny_config(out);
  PipelineResult r = run_pipeline(cfg);
  CHECK(r.deployed);
  CHECK(r.validation.identical);
  CHECK(fs::exists(out + "/plan.json"));
  CHECK(fs::exists(out + "/model.knj"));
  CHECK(fs::exists(out + "/loss.csv"));
  CHECK(fs::exists(out + "/accuracy.json"));
  CHECK(fs::exists(out + "/validation.txt"));
}

TEST_CASE("pipeline: fp32 run skips deployment stages, writes a float blob") {
  std::string out = scratch("fp32");
  PipelineConfig cfg = tiny_config(out);
  cfg.scheme_override = Scheme::Fp32;
  PipelineResult r = run_pipeline(cfg);
  CHECK(!r.deployed);
  CHECK(r.trained);
  CHECK(fs::exists(out + "/weights.knjf"));
  CHECK(fs::exists(out + "/loss.csv"));
  CHECK(!fs::exists(out + "/model.knj"));
}

TEST_CASE("pipeline: asym scheme is a plan-only artifact") {
  std::string out = scratch("asym");
  PipelineConfig cfg = tiny_config(out);
  cfg.scheme_override = Scheme::Asym;
  PipelineResult r = run_pipeline(cfg);
  CHECK(!r.trained);
  CHECK(fs::exists(out + "/plan.json"));
  std::ifstream f(out + "/plan.json");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CHECK(text.find("dynamic_staging_ratio") != std::string::npos);
}

TEST_CASE("pipeline: manifest errors surface before any artifact is written") {
  std::string out = scratch("badmanifest") + "/sub";
  PipelineConfig cfg = tiny_config(out);
  std::string bad = scratch("badmanifest") + "/bad.manifest";
  std::ofstream(bad) << "version 1\ninput 8 8 3 uint8\nlayer lstm\n";
  cfg.manifest_path = bad;
  CHECK_THROWS_AS(run_pipeline(cfg), InvalidInputError);
  CHECK(!fs::exists(out + "/plan.json"));
}

TEST_CASE("import: fp32 weights round into a validated quantized deployment") {
  std::string out = scratch("imp_fp32");
  PipelineConfig cfg = tiny_config(out);
  cfg.scheme_override = Scheme::Fp32;
  run_pipeline(cfg);

  PipelineConfig imp = tiny_config(scratch("imp_kanji"));
  imp.epochs = 1; // one epoch of fine-tuning
  PipelineResult r = run_import(imp, out + "/weights.knjf");
  CHECK(r.deployed);
  CHECK(r.validation.identical);
}

TEST_CASE("lr sweep: one csv per pair, equal step counts") {
  std::string out = scratch("sweep");
  PipelineConfig cfg = tiny_config(out);
  std::vector<std::pair<OptimizerKind, double>> pairs = {
      {OptimizerKind::Sgd, 0.1}, {OptimizerKind::Sgd, 0.15}, {OptimizerKind::Adam, 1e-3}};
  auto times = run_lr_sweep(cfg, pairs, {TrainMode::QatTrain});
  CHECK(times.size() == 3);
  CHECK(fs::exists(out + "/loss_qat_sgd_0p1.csv"));
  CHECK(fs::exists(out + "/loss_qat_sgd_0p15.csv"));
  CHECK(fs::exists(out + "/loss_qat_adam_0p001.csv"));

  auto count_lines = [](const std::string& p) {
    std::ifstream f(p);
    int n = 0;
    std::string line;
    while (std::getline(f, line)) n++;
    return n;
  };
  int a = count_lines(out + "/loss_qat_sgd_0p1.csv");
  CHECK(a == count_lines(out + "/loss_qat_sgd_0p15.csv"));
  CHECK(a == count_lines(out + "/loss_qat_adam_0p001.csv"));

  // single pair, both modes: paired traces for the step-time comparison
  std::string out2 = scratch("sweep_single");
  PipelineConfig cfg2 = tiny_config(out2);
  auto paired = run_lr_sweep(cfg2, {{OptimizerKind::Sgd, 0.1}},
                             {TrainMode::QatTrain, TrainMode::Fp32});
  CHECK(paired.size() == 2);
  CHECK(fs::exists(out2 + "/loss_qat_sgd_0p1.csv"));
  CHECK(fs::exists(out2 + "/loss_fp32_sgd_0p1.csv"));
}

TEST_CASE("bench: memory numbers reproduce exactly, timings are positive") {
  BenchReport a = run_bench({16, 32}, 3, 9);
  BenchReport b = run_bench({16, 32}, 3, 9);
  REQUIRE(a.requant.size() == b.requant.size());
  for (size_t i = 0; i < a.requant.size(); ++i) {
    CHECK(a.requant[i].staging_bytes == b.requant[i].staging_bytes);
    CHECK(a.requant[i].output_bytes == b.requant[i].output_bytes);
    CHECK(a.requant[i].memory_ratio == 4.0);
    CHECK(a.requant[i].dynamic_ms > 0.0);
  }
  std::string csv = bench_report_csv(a);
  CHECK(csv.find("matmul,16") != std::string::npos);
  CHECK(csv.find("requant,") != std::string::npos);
}

TEST_CASE("validator result is independent of the thread budget") {
  PipelineConfig cfg = tiny_config(scratch("threads"));
  ModelManifest m = *parse_manifest_file(cfg.manifest_path).manifest;
  GeneratedModel model = gen_trainable(build_plan(m));
  init_params(model.graph, 4);
  model.graph.freeze_ranges();
  ExecutionPlan plan = build_plan(m, collect_ranges(model));
  load_params(plan, export_params(model, plan));

  setenv("QF_THREADS", "1", 1);
  ValidationReport one = validate_bitexact(plan, model, 30, 12);
  setenv("QF_THREADS", "2", 1);
  ValidationReport two = validate_bitexact(plan, model, 30, 12);
  unsetenv("QF_THREADS");
  CHECK(one.identical == two.identical);
  CHECK(one.samples == two.samples);
}

#ifdef KANJI_CLI_PATH
TEST_CASE("cli: exit codes for config and data errors") {
  std::string cli = KANJI_CLI_PATH;
  std::string out = scratch("cli");

  // usage error: unknown scheme
  int rc = std::system((cli + " pipeline --manifest " + manifest_dir() +
                        "/cifar10_small.manifest --synth train=32,test=32 --scheme bogus"
                        " --seed 1 --out " + out + " >/dev/null 2>&1")
                           .c_str());
  CHECK(WEXITSTATUS(rc) == 1);

  // data error: missing CIFAR directory
  rc = std::system((cli + " pipeline --manifest " + manifest_dir() +
                    "/cifar10_small.manifest --data /nonexistent --seed 1 --out " + out +
                    " >/dev/null 2>&1")
                       .c_str());
  CHECK(WEXITSTATUS(rc) == 2);

  // success: bench on tiny sizes
  rc = std::system((cli + " bench --sizes 16 --reps 3 --seed 1 --out " + out +
                    " >/dev/null 2>&1")
                       .c_str());
  CHECK(WEXITSTATUS(rc) == 0);
  CHECK(fs::exists(out + "/bench.csv"));
}
#endif
