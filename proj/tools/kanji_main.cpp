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

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "kanji/bench.hpp"
#include "kanji/pipeline.hpp"

namespace {

// exit codes: 0 success, 1 usage/config, 2 data error, 3 validation divergence
constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;

kanji::Scheme parse_scheme(const std::string& s) {
  if (s == "kanji") return kanji::Scheme::Kanji;
  if (s == "asym") return kanji::Scheme::Asym;
  if (s == "fp32") return kanji::Scheme::Fp32;
  throw CLI::ValidationError("--scheme", "expected kanji|asym|fp32");
}

kanji::PreprocKind parse_preproc(const std::string& s) {
  if (s == "bnlike") return kanji::PreprocKind::BatchNormLike;
  if (s == "meanimg") return kanji::PreprocKind::MeanImage;
  if (s == "pis") return kanji::PreprocKind::PerImageStd;
  if (s == "none") return kanji::PreprocKind::None;
  throw CLI::ValidationError("--preproc", "expected bnlike|meanimg|pis|none");
}

struct CommonArgs {
  std::string manifest;
  std::string data;
  std::string synth; // "train=2000,test=500,classes=10,noise=0.5,sep=1.0,jitter=2"
  std::string scheme, preproc, optimizer = "sgd";
  uint64_t seed = 1;
  int epochs = 1, batch = 32;
  double lr = 0.1, momentum = 0.9;
  double lr_decay = 1.0;
  int64_t lr_decay_every = 0;
  int64_t train_limit = 0, test_limit = 0;
  std::string out = "out";
  int samples = 200;
  bool flip = false, crop = false;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool needs_manifest) {
  auto* mopt = cmd->add_option("--manifest", a.manifest, "model manifest file");
  if (needs_manifest) mopt->required();
  cmd->add_option("--data", a.data, "CIFAR-10 binary directory");
  cmd->add_option("--synth", a.synth,
                  "synthetic dataset spec, e.g. train=2000,test=500,classes=10,noise=0.5");
  cmd->add_option("--scheme", a.scheme, "override manifest scheme (kanji|asym|fp32)");
  cmd->add_option("--preproc", a.preproc, "override preprocessing (bnlike|meanimg|pis|none)");
  cmd->add_option("--seed", a.seed, "rng seed")->required();
  cmd->add_option("--epochs", a.epochs, "training epochs");
  cmd->add_option("--batch", a.batch, "batch size");
  cmd->add_option("--optimizer", a.optimizer, "sgd|adam");
  cmd->add_option("--lr", a.lr, "initial learning rate");
  cmd->add_option("--momentum", a.momentum, "sgd momentum");
  cmd->add_option("--lr-decay", a.lr_decay, "stepwise decay factor");
  cmd->add_option("--lr-decay-every", a.lr_decay_every, "steps per decay");
  cmd->add_option("--train-limit", a.train_limit, "cap on train examples");
  cmd->add_option("--test-limit", a.test_limit, "cap on test examples");
  cmd->add_option("--out", a.out, "output directory")->required();
  cmd->add_option("--samples", a.samples, "bit-exactness validation samples");
  cmd->add_flag("--augment-flip", a.flip, "random horizontal flip");
  cmd->add_flag("--augment-crop", a.crop, "pad-4 random crop");
}

kanji::PipelineConfig to_config(const CommonArgs& a) {
  kanji::PipelineConfig cfg;
  cfg.manifest_path = a.manifest;
  cfg.data_dir = a.data;
  if (!a.synth.empty()) {
    kanji::SynthDataConfig s;
    std::stringstream ss(a.synth);
    std::string kv;
    while (std::getline(ss, kv, ',')) {
      size_t eq = kv.find('=');
      if (eq == std::string::npos) throw CLI::ValidationError("--synth", "expected key=value list");
      std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
      if (k == "train") s.train_n = std::stoll(v);
      else if (k == "test") s.test_n = std::stoll(v);
      else if (k == "classes") s.classes = std::stoi(v);
      else if (k == "noise") s.noise = std::stod(v);
      else if (k == "sep") s.sep = std::stod(v);
      else if (k == "jitter") s.jitter = std::stoi(v);
      else if (k == "class_seed") s.class_seed = std::stoull(v);
      else throw CLI::ValidationError("--synth", "unknown key '" + k + "'");
    }
    cfg.synth = s;
  }
  if (!a.data.empty() && !a.synth.empty())
    throw CLI::ValidationError("--data/--synth", "dataset sources are mutually exclusive");
  cfg.train_limit = a.train_limit;
  cfg.test_limit = a.test_limit;
  cfg.seed = a.seed;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.optimizer.kind =
      a.optimizer == "adam" ? kanji::OptimizerKind::Adam : kanji::OptimizerKind::Sgd;
  if (a.optimizer != "adam" && a.optimizer != "sgd")
    throw CLI::ValidationError("--optimizer", "expected sgd|adam");
  cfg.optimizer.lr.initial = a.lr;
  cfg.optimizer.lr.decay_factor = a.lr_decay;
  cfg.optimizer.lr.decay_every = a.lr_decay_every;
  cfg.optimizer.momentum = a.momentum;
  cfg.out_dir = a.out;
  cfg.validate_samples = a.samples;
  cfg.augment_flip = a.flip;
  cfg.augment_crop = a.crop;
  if (!a.scheme.empty()) cfg.scheme_override = parse_scheme(a.scheme);
  if (!a.preproc.empty()) cfg.preproc_override = parse_preproc(a.preproc);
  return cfg;
}

std::vector<std::pair<kanji::OptimizerKind, double>> parse_pairs(const std::string& spec) {
  std::vector<std::pair<kanji::OptimizerKind, double>> pairs;
  std::stringstream ss(spec);
  std::string item;
  while (std::getline(ss, item, ',')) {
    size_t colon = item.find(':');
    if (colon == std::string::npos)
      throw CLI::ValidationError("--pairs", "expected optimizer:lr[,optimizer:lr...]");
    std::string opt = item.substr(0, colon);
    double lr = std::stod(item.substr(colon + 1));
    if (opt != "sgd" && opt != "adam")
      throw CLI::ValidationError("--pairs", "optimizer must be sgd or adam");
    pairs.emplace_back(opt == "adam" ? kanji::OptimizerKind::Adam : kanji::OptimizerKind::Sgd, lr);
  }
  if (pairs.empty()) throw CLI::ValidationError("--pairs", "no pairs given");
  return pairs;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"kanji: deploy-first int8 quantization toolchain"};
  app.require_subcommand(1);

  CommonArgs pipe_args;
  CLI::App* pipe = app.add_subcommand("pipeline",
                                      "parse -> plan -> trainable -> train -> export -> validate");
  add_common(pipe, pipe_args, true);

  CommonArgs sweep_args;
  std::string pairs_spec = "sgd:0.1,sgd:0.15,adam:0.001";
  std::string modes_spec = "qat";
  CLI::App* sweep = app.add_subcommand("lr-sweep", "loss traces per (optimizer, lr) pair");
  add_common(sweep, sweep_args, true);
  sweep->add_option("--pairs", pairs_spec, "optimizer:lr list");
  sweep->add_option("--modes", modes_spec, "qat,fp32 or both");

  std::string sizes_spec = "32,48,64,96";
  int bench_reps = 7;
  uint64_t bench_seed = 1;
  std::string bench_out = "out";
  CLI::App* bench = app.add_subcommand("bench",
                                       "symmetric vs offset-corrected matmul; shift vs dynamic "
                                       "requantization");
  bench->add_option("--sizes", sizes_spec, "square matmul sizes");
  bench->add_option("--reps", bench_reps, "timed repetitions (median)");
  bench->add_option("--seed", bench_seed, "rng seed");
  bench->add_option("--out", bench_out, "output directory")->required();

  CommonArgs import_args;
  std::string weights_path;
  CLI::App* import_cmd = app.add_subcommand("import",
                                            "seed from exported fp32 weights, fine-tune, deploy");
  add_common(import_cmd, import_args, true);
  import_cmd->add_option("--weights", weights_path, "KNJF float blob")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e); // prints the message; help and version exit 0
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (pipe->parsed()) {
      kanji::PipelineResult r = kanji::run_pipeline(to_config(pipe_args));
      if (r.trained)
        std::printf("train accuracy %.4f, test accuracy %.4f (mean step %.2f ms)\n",
                    r.train_accuracy, r.test_accuracy, r.train.mean_step_ms);
      if (r.deployed) {
        std::printf("bit-exactness: %s\n", r.validation.to_string().c_str());
        if (!r.validation.identical) return kExitDivergence;
      }
      return kExitOk;
    }
    if (sweep->parsed()) {
      std::vector<kanji::TrainMode> modes;
      if (modes_spec == "qat") modes = {kanji::TrainMode::QatTrain};
      else if (modes_spec == "fp32") modes = {kanji::TrainMode::Fp32};
      else if (modes_spec == "both" || modes_spec == "qat,fp32" || modes_spec == "fp32,qat")
        modes = {kanji::TrainMode::QatTrain, kanji::TrainMode::Fp32};
      else throw CLI::ValidationError("--modes", "expected qat, fp32 or both");
      auto times = kanji::run_lr_sweep(to_config(sweep_args), parse_pairs(pairs_spec), modes);
      for (const auto& [tag, ms] : times) std::printf("%s: %.2f ms/step\n", tag.c_str(), ms);
      return kExitOk;
    }
    if (bench->parsed()) {
      std::vector<int> sizes;
      std::stringstream ss(sizes_spec);
      std::string item;
      while (std::getline(ss, item, ',')) sizes.push_back(std::stoi(item));
      kanji::BenchReport report = kanji::run_bench(sizes, bench_reps, bench_seed);
      std::string csv = kanji::bench_report_csv(report);
      std::filesystem::create_directories(bench_out);
      std::ofstream f(bench_out + "/bench.csv", std::ios::binary);
      f << csv;
      std::fputs(csv.c_str(), stdout);
      return kExitOk;
    }
    if (import_cmd->parsed()) {
      kanji::PipelineResult r = kanji::run_import(to_config(import_args), weights_path);
      std::printf("train accuracy %.4f, test accuracy %.4f\n", r.train_accuracy, r.test_accuracy);
      std::printf("bit-exactness: %s\n", r.validation.to_string().c_str());
      return r.validation.identical ? kExitOk : kExitDivergence;
    }
  } catch (const CLI::Error& e) {
    app.exit(e);
    return kExitConfig;
  } catch (const kanji::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const kanji::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
  return kExitConfig;
}
