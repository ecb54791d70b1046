#pragma once

// On-disk dataset layout consumed by the CLI:
//
//   <dir>/dataset.json      shape, encoder spec (or null), prompt split
//   <dir>/inputs.ovci       input vectors + labels (absent for cache-only data)
//   <dir>/prompts/<id>.ovcp one prompt head per prompt id

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovc/model.hpp"
#include "ovc/noise.hpp"

namespace ovc::app {

struct SyntheticParams {
  std::uint64_t seed = 0;
  std::size_t num_classes = 10;
  std::size_t dim = 64;
  std::size_t dim_in = 32;
  std::size_t n_inputs = 100;
  std::size_t n_prompts = 8;
  std::size_t n_novel = 0;  // 0 = n_prompts / 8, at least 1
  double jitter = 0.05;
  double input_scale = 1.0;
  std::size_t hidden = 64;
};

struct Dataset {
  std::filesystem::path root;
  nlohmann::json spec;
  std::optional<SyntheticEncoderSpec> encoder_spec;
  RowMatrixD inputs;             // n_inputs x dim_in; empty for cache-only data
  std::vector<std::int32_t> labels;  // -1 when unknown
  std::size_t n_inputs = 0;
  std::vector<std::string> known;
  std::vector<std::string> novel;
  std::map<std::string, PromptHead> prompts;

  Encoder make_encoder() const;
  std::span<const double> input(std::size_t i) const;
  std::optional<std::int32_t> label(std::size_t i) const;
  std::uint64_t content_hash() const;
};

/// Deterministic in `params`: the same parameters write byte-identical files.
void gen_synthetic(const SyntheticParams& params, const std::filesystem::path& dir);

Dataset load_dataset(const std::filesystem::path& dir);

void write_inputs(const std::filesystem::path& path, const RowMatrixD& inputs,
                  const std::vector<std::int32_t>& labels);
void load_inputs(const std::filesystem::path& path, RowMatrixD& inputs,
                 std::vector<std::int32_t>& labels);

}  // namespace ovc::app
