#include "ovc/cache.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "ovc/binary_io.hpp"
#include "ovc/error.hpp"
#include "ovc/rng.hpp"

namespace ovc {
namespace fs = std::filesystem;

namespace {

constexpr char kMagicEmb[4] = {'O', 'V', 'C', 'E'};
constexpr char kMagicMvn[4] = {'O', 'V', 'C', 'M'};
constexpr char kMagicPrompt[4] = {'O', 'V', 'C', 'P'};

}  // namespace

// ---------------------------------------------------------------------------
// Embedding cache

std::uint64_t embedding_fingerprint(std::uint64_t master_seed, double sigma,
                                    std::uint64_t chunk_size, std::uint64_t n0,
                                    std::uint64_t n) {
  rng::Fnv1a h;
  h.update_value(master_seed);
  h.update_value(sigma);
  h.update_value(chunk_size);
  h.update_value(n0);
  h.update_value(n);
  return h.digest();
}

std::uint64_t EmbeddingCache::fingerprint() const {
  return embedding_fingerprint(master_seed, sigma, chunk_size, n0, n);
}

EmbeddingCache build_embedding_cache(const Encoder& enc, std::span<const double> x,
                                     std::uint64_t input_id, std::size_t n0,
                                     std::size_t n, const NoiseStream& stream,
                                     const SamplingOptions& opts) {
  require(n0 >= 1 && n >= 1, ErrorCode::kInvalidArgument, "cache needs n0, n >= 1");
  stream.validate();
  EmbeddingCache cache;
  cache.input_id = input_id;
  cache.sigma = stream.sigma;
  cache.master_seed = stream.master_seed;
  cache.chunk_size = stream.chunk_size;
  cache.n0 = n0;
  cache.n = n;
  const auto dim = static_cast<Eigen::Index>(enc.dim_out());
  RowMatrixF sel(static_cast<Eigen::Index>(n0), dim);
  RowMatrixF est(static_cast<Eigen::Index>(n), dim);
  encode_draws(enc, x, stream, 0, 0, n0, sel, opts);
  encode_draws(enc, x, stream, estimation_offset(n0, stream.chunk_size), 0, n, est, opts);
  cache.rows.resize(static_cast<Eigen::Index>(n0 + n), dim);
  cache.rows.topRows(static_cast<Eigen::Index>(n0)) = sel;
  cache.rows.bottomRows(static_cast<Eigen::Index>(n)) = est;
  return cache;
}

std::uint64_t embedding_cache_file_size(std::uint64_t n0, std::uint64_t n,
                                        std::uint64_t dim) {
  // magic, version, input_id, sigma, seed, chunk, n0, n, D, fingerprint
  constexpr std::uint64_t kHeader = 4 + 4 + 8 * 8;
  return kHeader + 4 * (n0 + n) * dim + 8;
}

void write_embedding_cache(const fs::path& path, const EmbeddingCache& cache) {
  require(cache.rows.rows() == static_cast<Eigen::Index>(cache.n0 + cache.n),
          ErrorCode::kDimensionMismatch, "embedding cache row count != n0 + n");
  ByteWriter w;
  w.put_bytes(kMagicEmb, 4);
  w.put(kFormatVersion);
  w.put(cache.input_id);
  w.put(cache.sigma);
  w.put(cache.master_seed);
  w.put(cache.chunk_size);
  w.put(cache.n0);
  w.put(cache.n);
  w.put(static_cast<std::uint64_t>(cache.dim()));
  w.put(cache.fingerprint());
  w.put_bytes(cache.rows.data(), sizeof(float) * static_cast<std::size_t>(cache.rows.size()));
  w.finish();
  write_atomically(path, w.bytes());
}

EmbeddingCache load_embedding_cache(const fs::path& path) {
  ByteReader r(read_file(path), path);
  r.expect_magic(kMagicEmb);
  EmbeddingCache cache;
  cache.input_id = r.get<std::uint64_t>("input_id");
  cache.sigma = r.get<double>("sigma");
  cache.master_seed = r.get<std::uint64_t>("master_seed");
  cache.chunk_size = r.get<std::uint64_t>("chunk_size");
  cache.n0 = r.get<std::uint64_t>("n0");
  cache.n = r.get<std::uint64_t>("n");
  const auto dim = r.get<std::uint64_t>("D");
  const auto stored_fp = r.get<std::uint64_t>("fingerprint");
  require(cache.chunk_size >= 1 && dim >= 1 && cache.n0 + cache.n >= 2 &&
              (cache.n0 + cache.n) * dim < (1ULL << 34),
          ErrorCode::kCorruptRecord, path.string() + ": implausible header dimensions");
  require(stored_fp == cache.fingerprint(), ErrorCode::kFingerprintMismatch,
          path.string() + ": stored fingerprint does not match header fields");
  cache.rows.resize(static_cast<Eigen::Index>(cache.n0 + cache.n),
                    static_cast<Eigen::Index>(dim));
  r.get_bytes(cache.rows.data(), sizeof(float) * static_cast<std::size_t>(cache.rows.size()),
              "rows");
  r.verify_checksum();
  return cache;
}

// ---------------------------------------------------------------------------
// Multivariate normal

CholeskyFactor cholesky_with_jitter(const Eigen::MatrixXd& cov) {
  require(cov.rows() == cov.cols() && cov.rows() >= 1, ErrorCode::kDimensionMismatch,
          "covariance must be square");
  const auto dim = cov.rows();
  if (cov.isZero(0.0)) return {Eigen::MatrixXd::Zero(dim, dim), 0.0};

  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return {llt.matrixL(), 0.0};

  const double trace = cov.trace();
  require(trace > 0.0 && std::isfinite(trace), ErrorCode::kNonPsd,
          "covariance has non-positive trace");
  const double cap = 1e-2 * trace;
  double jitter = 1e-6 * trace / static_cast<double>(dim);
  const auto eye = Eigen::MatrixXd::Identity(dim, dim);
  while (jitter <= cap) {
    llt.compute(cov + jitter * eye);
    if (llt.info() == Eigen::Success) return {llt.matrixL(), jitter};
    jitter *= 2.0;
  }
  fail(ErrorCode::kNonPsd, "covariance not factorizable with jitter up to 1e-2 * trace");
}

namespace {

template <typename Derived>
MvnParams fit_mvn_impl(const Eigen::MatrixBase<Derived>& rows) {
  require(rows.rows() >= 2, ErrorCode::kInsufficientSamples,
          "fitting a covariance needs at least 2 rows, got " +
              std::to_string(rows.rows()));
  const auto m = rows.rows();
  const auto dim = rows.cols();
  constexpr Eigen::Index kBlock = 4096;

  // Two passes over blocks of doubles: mean, then centered cross products.
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  for (Eigen::Index start = 0; start < m; start += kBlock) {
    const Eigen::Index len = std::min(kBlock, m - start);
    sum += rows.middleRows(start, len).template cast<double>().colwise().sum().transpose();
  }
  MvnParams out;
  out.mean = sum / static_cast<double>(m);
  out.cov = Eigen::MatrixXd::Zero(dim, dim);
  for (Eigen::Index start = 0; start < m; start += kBlock) {
    const Eigen::Index len = std::min(kBlock, m - start);
    Eigen::MatrixXd centered = rows.middleRows(start, len).template cast<double>();
    centered.rowwise() -= out.mean.transpose();
    out.cov.noalias() += centered.transpose() * centered;
  }
  out.cov /= static_cast<double>(m - 1);
  out.cov = (0.5 * (out.cov + out.cov.transpose())).eval();
  out.fit_sample_count = static_cast<std::uint64_t>(m);

  Eigen::LLT<Eigen::MatrixXd> llt(out.cov);
  if (llt.info() != Eigen::Success) {
    const double trace = out.cov.trace();
    require(std::isfinite(trace), ErrorCode::kNonPsd, "non-finite embedding covariance");
    double jitter = trace > 0.0 ? 1e-6 * trace / static_cast<double>(dim) : 1e-12;
    const auto eye = Eigen::MatrixXd::Identity(dim, dim);
    for (;;) {
      llt.compute(out.cov + jitter * eye);
      if (llt.info() == Eigen::Success) break;
      jitter *= 2.0;
    }
    out.jitter_applied = jitter;
  }
  return out;
}

}  // namespace

MvnParams fit_mvn(const Eigen::MatrixXd& rows) { return fit_mvn_impl(rows); }

MvnParams fit_mvn(const RowMatrixF& rows) { return fit_mvn_impl(rows); }

MvnParams transform_mvn(const PromptHead& head, const MvnParams& mvn) {
  require(head.dim() == mvn.dim(), ErrorCode::kDimensionMismatch,
          "prompt dim " + std::to_string(head.dim()) + " != mvn dim " +
              std::to_string(mvn.dim()));
  const auto k = static_cast<Eigen::Index>(head.num_classes());
  const auto d = static_cast<Eigen::Index>(head.dim());
  const Eigen::MatrixXd p =
      Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          head.data().data(), k, d)
          .cast<double>();
  MvnParams out;
  out.input_id = mvn.input_id;
  out.sigma = mvn.sigma;
  out.fit_sample_count = mvn.fit_sample_count;
  out.mean = p * mvn.mean;
  const Eigen::MatrixXd c = p * mvn.cov * p.transpose();
  out.cov = 0.5 * (c + c.transpose());
  return out;
}

RowMatrixD sample_mvn(const MvnParams& mvn, std::size_t count, std::uint64_t seed) {
  require(mvn.dim() >= 1 && mvn.cov.rows() == mvn.mean.size() &&
              mvn.cov.cols() == mvn.mean.size(),
          ErrorCode::kDimensionMismatch, "malformed mvn parameters");
  const CholeskyFactor factor = cholesky_with_jitter(mvn.cov);
  const auto dim = static_cast<Eigen::Index>(mvn.dim());
  RowMatrixD out(static_cast<Eigen::Index>(count), dim);
  rng::GaussianSource gauss(seed);
  Eigen::VectorXd z(dim);
  const Eigen::MatrixXd& lower = factor.lower;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    for (Eigen::Index j = 0; j < dim; ++j) z[j] = gauss.next();
    for (Eigen::Index i = 0; i < dim; ++i) {
      double acc = mvn.mean[i];
      for (Eigen::Index j = 0; j <= i; ++j) acc += lower(i, j) * z[j];
      out(r, i) = acc;
    }
  }
  return out;
}

std::uint64_t mvn_file_size(std::uint64_t dim) {
  // magic, version, input_id, sigma, D, fit_sample_count, jitter
  constexpr std::uint64_t kHeader = 4 + 4 + 5 * 8;
  return kHeader + 4 * (dim + dim * dim) + 8;
}

void write_mvn(const fs::path& path, const MvnParams& mvn) {
  require(mvn.cov.rows() == mvn.mean.size() && mvn.cov.cols() == mvn.mean.size(),
          ErrorCode::kDimensionMismatch, "malformed mvn parameters");
  ByteWriter w;
  w.put_bytes(kMagicMvn, 4);
  w.put(kFormatVersion);
  w.put(mvn.input_id);
  w.put(mvn.sigma);
  w.put(static_cast<std::uint64_t>(mvn.dim()));
  w.put(mvn.fit_sample_count);
  w.put(mvn.jitter_applied);
  for (Eigen::Index i = 0; i < mvn.mean.size(); ++i) w.put(static_cast<float>(mvn.mean[i]));
  for (Eigen::Index i = 0; i < mvn.cov.rows(); ++i) {
    for (Eigen::Index j = 0; j < mvn.cov.cols(); ++j) w.put(static_cast<float>(mvn.cov(i, j)));
  }
  w.finish();
  write_atomically(path, w.bytes());
}

MvnParams load_mvn(const fs::path& path) {
  ByteReader r(read_file(path), path);
  r.expect_magic(kMagicMvn);
  MvnParams mvn;
  mvn.input_id = r.get<std::uint64_t>("input_id");
  mvn.sigma = r.get<double>("sigma");
  const auto dim = r.get<std::uint64_t>("D");
  require(dim >= 1 && dim < (1ULL << 16), ErrorCode::kCorruptRecord,
          path.string() + ": implausible D");
  mvn.fit_sample_count = r.get<std::uint64_t>("fit_sample_count");
  mvn.jitter_applied = r.get<double>("jitter_applied");
  const auto d = static_cast<Eigen::Index>(dim);
  mvn.mean.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) mvn.mean[i] = r.get<float>("mu");
  mvn.cov.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) mvn.cov(i, j) = r.get<float>("cov");
  }
  r.verify_checksum();
  require((mvn.cov - mvn.cov.transpose()).cwiseAbs().maxCoeff() <= 1e-9,
          ErrorCode::kCorruptRecord, path.string() + ": covariance is not symmetric");
  return mvn;
}

// ---------------------------------------------------------------------------
// Prompt heads

void write_prompt_head(const fs::path& path, const PromptHead& head) {
  ByteWriter w;
  w.put_bytes(kMagicPrompt, 4);
  w.put(kFormatVersion);
  w.put(static_cast<std::uint64_t>(head.num_classes()));
  w.put(static_cast<std::uint64_t>(head.dim()));
  w.put_string(head.prompt_id());
  w.put_bytes(head.data().data(), sizeof(float) * head.data().size());
  for (const auto& label : head.labels()) w.put_string(label);
  w.finish();
  write_atomically(path, w.bytes());
}

PromptHead load_prompt_head(const fs::path& path) {
  ByteReader r(read_file(path), path);
  r.expect_magic(kMagicPrompt);
  const auto k = r.get<std::uint64_t>("K");
  const auto d = r.get<std::uint64_t>("D");
  require(k >= 2 && d >= 1 && k * d < (1ULL << 28), ErrorCode::kCorruptRecord,
          path.string() + ": implausible K/D");
  std::string id = r.get_string("prompt_id");
  std::vector<float> rows(k * d);
  r.get_bytes(rows.data(), sizeof(float) * rows.size(), "rows");
  std::vector<std::string> labels;
  labels.reserve(k);
  for (std::uint64_t i = 0; i < k; ++i) labels.push_back(r.get_string("labels"));
  r.verify_checksum();
  for (std::uint64_t i = 0; i < k; ++i) {
    double norm2 = 0.0;
    for (std::uint64_t j = 0; j < d; ++j) norm2 += double(rows[i * d + j]) * rows[i * d + j];
    require(std::fabs(std::sqrt(norm2) - 1.0) <= 1e-5, ErrorCode::kCorruptRecord,
            path.string() + ": row " + std::to_string(i) + " is not unit norm");
  }
  return PromptHead(std::move(id), d, std::move(rows), std::move(labels));
}

// ---------------------------------------------------------------------------
// Certification metadata

std::uint64_t CertMetaCache::trace_fingerprint() const {
  return stream().fingerprint(estimation_offset(n0, chunk_size));
}

void CertMetaCache::record(CertMetaEntry entry) {
  require(entry.trace.stream_fingerprint == trace_fingerprint(), ErrorCode::kSeedMismatch,
          "trace for prompt '" + entry.prompt_id +
              "' was recorded on a different noise stream");
  const std::string id = entry.prompt_id;
  entries.insert_or_assign(id, std::move(entry));
}

void store_cert_meta(const fs::path& path, const CertMetaCache& meta) {
  using nlohmann::json;
  std::string out;
  json header = {{"kind", "header"},     {"input_id", meta.input_id},
                 {"sigma", meta.sigma},  {"master_seed", meta.master_seed},
                 {"chunk_size", meta.chunk_size}, {"n0", meta.n0}};
  out += header.dump() + "\n";
  for (const auto& [id, e] : meta.entries) {
    json line = {{"kind", "prompt"},
                 {"prompt_id", id},
                 {"p_a_lower", e.p_a_lower},
                 {"c_a", e.c_a},
                 {"fingerprint", e.trace.stream_fingerprint},
                 {"trace", e.trace.preds}};
    out += line.dump() + "\n";
  }
  write_atomically(path, out);
}

CertMetaCache load_cert_meta(const fs::path& path) {
  using nlohmann::json;
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kCacheMiss, "cannot open " + path.string());
  CertMetaCache meta;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json j = json::parse(line);
      const std::string kind = j.at("kind").get<std::string>();
      if (kind == "header") {
        meta.input_id = j.at("input_id").get<std::uint64_t>();
        meta.sigma = j.at("sigma").get<double>();
        meta.master_seed = j.at("master_seed").get<std::uint64_t>();
        meta.chunk_size = j.at("chunk_size").get<std::uint64_t>();
        meta.n0 = j.at("n0").get<std::uint64_t>();
        have_header = true;
      } else if (kind == "prompt") {
        require(have_header, ErrorCode::kCorruptRecord,
                path.string() + ": prompt record before header");
        CertMetaEntry e;
        e.prompt_id = j.at("prompt_id").get<std::string>();
        e.p_a_lower = j.at("p_a_lower").get<double>();
        e.c_a = j.at("c_a").get<std::uint32_t>();
        e.trace.stream_fingerprint = j.at("fingerprint").get<std::uint64_t>();
        e.trace.preds = j.at("trace").get<std::vector<std::uint32_t>>();
        meta.record(std::move(e));
      } else {
        fail(ErrorCode::kCorruptRecord, path.string() + ": unknown record kind '" + kind + "'");
      }
    }
  } catch (const json::exception& ex) {
    fail(ErrorCode::kCorruptRecord,
         path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
  }
  require(have_header, ErrorCode::kCorruptRecord, path.string() + ": missing header");
  return meta;
}

}  // namespace ovc
