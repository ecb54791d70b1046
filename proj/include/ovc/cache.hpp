#pragma once

// Persistence for the three per-input caches and the prompt-head file:
//
//   OVCE  embedding cache: the n0 + n noisy encoder outputs of one input
//   OVCM  multivariate normal fitted to those embeddings
//   OVCP  prompt head (K x D unit rows + labels)
//   meta  per-input certification ledger (JSON lines) used by Modified-IRS
//
// Binary files are little-endian with a trailing 64-bit FNV-1a checksum over
// every preceding byte. Files are written to a temporary name and renamed
// into place.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>

#include <Eigen/Core>

#include "ovc/binary_io.hpp"
#include "ovc/model.hpp"
#include "ovc/noise.hpp"

namespace ovc {

// ---------------------------------------------------------------------------
// Embedding cache

struct EmbeddingCache {
  std::uint64_t input_id = 0;
  double sigma = 0.0;
  std::uint64_t master_seed = 0;
  std::uint64_t chunk_size = 400;
  std::uint64_t n0 = 0;
  std::uint64_t n = 0;
  RowMatrixF rows;  // (n0 + n) x D

  std::size_t dim() const { return static_cast<std::size_t>(rows.cols()); }
  std::uint64_t fingerprint() const;
  NoiseStream stream() const { return {master_seed, sigma, chunk_size}; }
};

std::uint64_t embedding_fingerprint(std::uint64_t master_seed, double sigma,
                                    std::uint64_t chunk_size, std::uint64_t n0,
                                    std::uint64_t n);

/// Encodes the selection draw (n0 rows, chunks from 0) followed by the
/// estimation draw (n rows, chunks from estimation_offset). Exactly n0 + n
/// encoder calls.
EmbeddingCache build_embedding_cache(const Encoder& enc, std::span<const double> x,
                                     std::uint64_t input_id, std::size_t n0,
                                     std::size_t n, const NoiseStream& stream,
                                     const SamplingOptions& opts = {});

void write_embedding_cache(const std::filesystem::path& path, const EmbeddingCache& cache);
EmbeddingCache load_embedding_cache(const std::filesystem::path& path);

/// Size in bytes of an OVCE file with these dimensions.
std::uint64_t embedding_cache_file_size(std::uint64_t n0, std::uint64_t n,
                                        std::uint64_t dim);

// ---------------------------------------------------------------------------
// Multivariate normal

struct MvnParams {
  std::uint64_t input_id = 0;
  double sigma = 0.0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
  std::uint64_t fit_sample_count = 0;
  double jitter_applied = 0.0;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

struct CholeskyFactor {
  Eigen::MatrixXd lower;
  double jitter = 0.0;
};

/// Cholesky factor of cov + jitter * I. Jitter starts at 1e-6 * trace / dim
/// and doubles until the factorization succeeds; exceeding 1e-2 * trace is a
/// non-psd error. An all-zero matrix factors to zero without jitter.
CholeskyFactor cholesky_with_jitter(const Eigen::MatrixXd& cov);

/// Column mean and unbiased (m - 1) covariance, accumulated in double.
MvnParams fit_mvn(const Eigen::MatrixXd& rows);
MvnParams fit_mvn(const RowMatrixF& rows);

/// N(mu, S) -> N(P mu, P S P^T), the logit-space distribution for head P.
MvnParams transform_mvn(const PromptHead& head, const MvnParams& mvn);

/// count x dim matrix of rows mean + L z, z standard normal from `seed`.
RowMatrixD sample_mvn(const MvnParams& mvn, std::size_t count, std::uint64_t seed);

void write_mvn(const std::filesystem::path& path, const MvnParams& mvn);
MvnParams load_mvn(const std::filesystem::path& path);
std::uint64_t mvn_file_size(std::uint64_t dim);

// ---------------------------------------------------------------------------
// Prompt heads

void write_prompt_head(const std::filesystem::path& path, const PromptHead& head);
PromptHead load_prompt_head(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Certification metadata

struct CertMetaEntry {
  std::string prompt_id;
  PredictionTrace trace;  // first n_p estimation-draw predictions
  double p_a_lower = 0.0;
  std::uint32_t c_a = 0;  // top class of the selection draw
};

struct CertMetaCache {
  std::uint64_t input_id = 0;
  double sigma = 0.0;
  std::uint64_t master_seed = 0;
  std::uint64_t chunk_size = 400;
  std::uint64_t n0 = 0;
  std::map<std::string, CertMetaEntry> entries;  // ordered by prompt id

  NoiseStream stream() const { return {master_seed, sigma, chunk_size}; }
  /// Fingerprint every entry's trace must carry.
  std::uint64_t trace_fingerprint() const;
  /// Inserts or replaces; rejects traces recorded on different noise.
  void record(CertMetaEntry entry);
};

void store_cert_meta(const std::filesystem::path& path, const CertMetaCache& meta);
CertMetaCache load_cert_meta(const std::filesystem::path& path);

}  // namespace ovc
