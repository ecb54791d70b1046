#pragma once

// The operations behind each `ovc` subcommand.

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovc/app/dataset.hpp"
#include "ovc/app/records.hpp"
#include "ovc/certify.hpp"

namespace ovc::app {

struct RunOptions {
  std::filesystem::path data_dir;
  std::filesystem::path out_dir = "ovc_runs";
  std::filesystem::path cache_dir;  // empty = $OVC_CACHE_DIR or ./ovc_cache
  CertConfig cfg;
  std::uint64_t seed = 0;
  std::size_t skip = 1;  // certify every skip-th input
  std::size_t chunk_size = 400;
  std::string prompts;   // known | novel | all; empty = mode default
  unsigned workers = 1;
  std::chrono::microseconds pad{0};  // per-encode padding (benchmarks)
  bool quiet = false;
};

struct CertifySummary {
  std::string mode;
  std::size_t records = 0;       // produced by this run
  std::size_t resumed = 0;       // already present, skipped
  std::size_t abstained = 0;
  std::size_t fast_path = 0;     // irs only
  double total_wall = 0.0;
  std::uint64_t encoder_calls = 0;          // summed over certificates
  std::uint64_t encoder_calls_counted = 0;  // from the instrumented counter

  double mean_wall() const { return records ? total_wall / records : 0.0; }
  double fast_path_fraction() const {
    return records ? static_cast<double>(fast_path) / records : 0.0;
  }
  double abstain_rate() const {
    return records ? static_cast<double>(abstained) / records : 0.0;
  }
  nlohmann::json to_json() const;
};

std::filesystem::path resolve_cache_dir(const RunOptions& opts);
std::filesystem::path embedding_path(const std::filesystem::path& cache_dir,
                                     std::uint64_t input_id, double sigma);
std::filesystem::path mvn_path(const std::filesystem::path& cache_dir,
                               std::uint64_t input_id, double sigma);
std::filesystem::path meta_path(const std::filesystem::path& cache_dir,
                                std::uint64_t input_id, double sigma);
std::filesystem::path records_path(const std::filesystem::path& out_dir,
                                   const std::string& mode);

/// Master seed of an input's noise stream.
std::uint64_t input_seed(std::uint64_t run_seed, std::uint64_t input_id);

std::vector<std::size_t> selected_inputs(std::size_t n_inputs, std::size_t skip);

std::string manifest_hash(const RunOptions& opts, const Dataset& ds);

void cmd_gen_synthetic(const SyntheticParams& params, const std::filesystem::path& dir);

/// Returns the number of cache files written (existing valid ones are kept).
std::size_t cmd_build_cache(const RunOptions& opts);
std::size_t cmd_fit_mvn(const RunOptions& opts);

/// mode: standard | irs | ovc | mvn. Appends records to
/// <out>/records_<mode>.jsonl and writes <out>/summary_<mode>.json.
CertifySummary cmd_certify(const std::string& mode, const RunOptions& opts);

nlohmann::json cmd_report(const std::vector<std::filesystem::path>& record_files);

}  // namespace ovc::app
