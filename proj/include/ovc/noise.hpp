#pragma once

// Replayable Gaussian noise and the sampling routines built on it.
//
// Noise is organised in chunks of `chunk_size` draws. Chunk i of a stream is
// generated from the sub-seed derive_seed(master_seed, i) alone, so any split
// of the work across workers yields the same draws. A "draw sequence" starts
// at some chunk offset and walks rows of consecutive chunks; draw j of it is
// row j % chunk_size of chunk offset + j / chunk_size.

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ovc/model.hpp"

namespace ovc {

using RowMatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct NoiseStream {
  std::uint64_t master_seed = 0;
  double sigma = 0.25;
  std::size_t chunk_size = 400;

  void validate() const;

  /// Identifies the draw sequence that starts at `chunk_offset`. Prefixes of
  /// the same sequence share the fingerprint.
  std::uint64_t fingerprint(std::size_t chunk_offset) const;
};

struct ClassCounts {
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;

  static ClassCounts from_predictions(std::span<const std::uint32_t> preds,
                                      std::size_t num_classes);
  /// Most frequent class, lowest index on ties.
  std::size_t top() const;
  bool operator==(const ClassCounts&) const = default;
};

struct PredictionTrace {
  std::vector<std::uint32_t> preds;
  std::uint64_t stream_fingerprint = 0;

  std::size_t size() const { return preds.size(); }
  bool operator==(const PredictionTrace&) const = default;
};

struct SamplingOptions {
  unsigned workers = 1;
};

/// Number of chunks that hold `draws` draws.
std::size_t chunks_for(std::size_t draws, std::size_t chunk_size);

/// Chunk offset of the estimation draw that follows an n0-draw selection
/// draw starting at chunk 0; the two never share a chunk.
std::size_t estimation_offset(std::size_t n0, std::size_t chunk_size);

/// chunk_size x dim matrix of i.i.d. N(0, sigma^2) entries.
RowMatrixD gaussian_chunk(const NoiseStream& stream, std::uint64_t chunk_index,
                          std::size_t dim);

/// Encodes x + noise for draws [first_draw, first_draw + count) of the draw
/// sequence at `chunk_offset`, writing one embedding per row of `out`.
void encode_draws(const Encoder& enc, std::span<const double> x,
                  const NoiseStream& stream, std::size_t chunk_offset,
                  std::size_t first_draw, std::size_t count, RowMatrixF& out,
                  const SamplingOptions& opts = {});

/// Predictions for the same draw range, in draw order.
std::vector<std::uint32_t> predict_draws(const Encoder& enc, const PromptHead& head,
                                         std::span<const double> x,
                                         const NoiseStream& stream,
                                         std::size_t chunk_offset,
                                         std::size_t first_draw, std::size_t count,
                                         const SamplingOptions& opts = {});

/// Class histogram of n noisy predictions. Exactly n encoder calls.
ClassCounts sample_under_noise(const Encoder& enc, const PromptHead& head,
                               std::span<const double> x, std::size_t n,
                               const NoiseStream& stream, std::size_t chunk_offset,
                               const SamplingOptions& opts = {});

/// Per-draw predictions of n noisy inputs, in draw order.
PredictionTrace pred_under_noise(const Encoder& enc, const PromptHead& head,
                                 std::span<const double> x, std::size_t n,
                                 const NoiseStream& stream, std::size_t chunk_offset,
                                 const SamplingOptions& opts = {});

/// Counts over cached embedding rows: rows [0, n0) give the selection
/// counts, rows [n0, n0 + n) the estimation counts. No encoder involved.
std::pair<ClassCounts, ClassCounts> count_prediction(const RowMatrixF& emb_rows,
                                                     const PromptHead& head,
                                                     std::size_t n0, std::size_t n);

}  // namespace ovc
