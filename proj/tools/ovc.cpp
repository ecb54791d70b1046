// ovc: certification engine command line.

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "ovc/app/commands.hpp"
#include "ovc/error.hpp"

namespace {

int exit_code_for(ovc::ErrorCode code) {
  using ovc::ErrorCode;
  switch (code) {
    case ErrorCode::kInvalidArgument:
    case ErrorCode::kConfigInvalid:
    case ErrorCode::kDimensionMismatch:
    case ErrorCode::kEncoderUnavailable:
      return 2;
    case ErrorCode::kCacheMiss:
    case ErrorCode::kEmptyCache:
    case ErrorCode::kMvnMissing:
      return 3;
    case ErrorCode::kFingerprintMismatch:
    case ErrorCode::kSeedMismatch:
    case ErrorCode::kMagicMismatch:
    case ErrorCode::kVersionUnsupported:
    case ErrorCode::kTruncation:
    case ErrorCode::kChecksumMismatch:
    case ErrorCode::kCorruptRecord:
      return 4;
    default:
      return 1;
  }
}

void add_run_flags(CLI::App* cmd, ovc::app::RunOptions& o, long& pad_us) {
  cmd->add_option("--data", o.data_dir, "Dataset directory")->required();
  cmd->add_option("--sigma", o.cfg.sigma, "Noise standard deviation");
  cmd->add_option("--n0", o.cfg.n0, "Selection sample size");
  cmd->add_option("--n", o.cfg.n, "Estimation sample size");
  cmd->add_option("--np", o.cfg.n_p, "Replayed samples for prompt matching");
  cmd->add_option("--alpha", o.cfg.alpha, "Failure probability of the p_A bound");
  cmd->add_option("--alpha-zeta", o.cfg.alpha_zeta, "Failure probability of the zeta bound");
  cmd->add_option("--gamma", o.cfg.gamma, "Disagreement threshold for the IRS fast path");
  cmd->add_option("--seed", o.seed, "Run seed; each input's noise seed derives from it");
  cmd->add_option("--skip", o.skip, "Certify every skip-th input");
  cmd->add_option("--chunk-size", o.chunk_size, "Noise chunk size");
  cmd->add_option("--cache-dir", o.cache_dir, "Cache root (default $OVC_CACHE_DIR or ./ovc_cache)");
  cmd->add_option("--out", o.out_dir, "Output directory for records and summaries");
  cmd->add_option("--workers", o.workers, "Worker threads");
  cmd->add_option("--pad-us", pad_us, "Sleep this many microseconds per encoder call");
  cmd->add_flag("--quiet", o.quiet, "No progress output");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Randomized-smoothing certification for zero-shot prompt classifiers"};
  app.require_subcommand(1);

  ovc::app::SyntheticParams gen;
  std::string gen_out;
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "Write a synthetic dataset and prompt family");
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--K", gen.num_classes, "Classes");
  gen_cmd->add_option("--D", gen.dim, "Embedding dimension");
  gen_cmd->add_option("--dim-in", gen.dim_in, "Input dimension");
  gen_cmd->add_option("--hidden", gen.hidden, "Hidden layer width");
  gen_cmd->add_option("--inputs", gen.n_inputs, "Number of inputs");
  gen_cmd->add_option("--prompts", gen.n_prompts, "Number of prompts");
  gen_cmd->add_option("--novel", gen.n_novel, "Novel prompts (default prompts/8)");
  gen_cmd->add_option("--jitter", gen.jitter, "Prompt jitter");
  gen_cmd->add_option("--input-scale", gen.input_scale, "Std of the input vectors");

  ovc::app::RunOptions run;
  run.workers = std::max(1u, std::thread::hardware_concurrency());
  long pad_us = 0;
  std::string mode;
  auto* build_cmd = app.add_subcommand("build-cache", "Encode and store n0+n noisy embeddings per input");
  add_run_flags(build_cmd, run, pad_us);
  auto* fit_cmd = app.add_subcommand("fit-mvn", "Fit MVN parameters from embedding caches");
  add_run_flags(fit_cmd, run, pad_us);
  auto* cert_cmd = app.add_subcommand("certify", "Certify inputs with one of the four methods");
  add_run_flags(cert_cmd, run, pad_us);
  cert_cmd->add_option("--mode", mode, "standard | irs | ovc | mvn")->required();
  cert_cmd->add_option("--prompts", run.prompts, "known | novel | all");

  std::vector<std::string> report_files;
  std::string report_out;
  auto* report_cmd = app.add_subcommand("report", "Curves, scatter data and speedups from records");
  report_cmd->add_option("records", report_files, "Record files")->required();
  report_cmd->add_option("--out", report_out, "Write JSON here instead of stdout");

  CLI11_PARSE(app, argc, argv);
  run.pad = std::chrono::microseconds(pad_us);
  for (auto* cmd : {build_cmd, fit_cmd, cert_cmd}) {
    // n_p only matters for certification; keep the default inside [1, n].
    if (*cmd && cmd->count("--np") == 0) run.cfg.n_p = std::min(run.cfg.n_p, run.cfg.n);
  }

  try {
    if (*gen_cmd) {
      ovc::app::cmd_gen_synthetic(gen, gen_out);
    } else if (*build_cmd) {
      const auto written = ovc::app::cmd_build_cache(run);
      std::cout << "{\"written\": " << written << "}\n";
    } else if (*fit_cmd) {
      const auto fitted = ovc::app::cmd_fit_mvn(run);
      std::cout << "{\"fitted\": " << fitted << "}\n";
    } else if (*cert_cmd) {
      std::cout << ovc::app::cmd_certify(mode, run).to_json().dump(2) << "\n";
    } else if (*report_cmd) {
      std::vector<std::filesystem::path> files(report_files.begin(), report_files.end());
      const auto report = ovc::app::cmd_report(files);
      if (report_out.empty()) {
        std::cout << report.dump(2) << "\n";
      } else {
        std::ofstream(report_out) << report.dump(2) << "\n";
      }
    }
  } catch (const ovc::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
