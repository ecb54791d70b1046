#include "ovc/noise.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "ovc/error.hpp"
#include "ovc/rng.hpp"

namespace ovc {
namespace {

// Runs fn(first_chunk_rel, last_chunk_rel) over contiguous chunk ranges.
template <typename Fn>
void for_chunk_ranges(std::size_t n_chunks, unsigned workers, Fn&& fn) {
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n_chunks)));
  if (workers <= 1) {
    fn(std::size_t{0}, n_chunks);
    return;
  }
  std::vector<std::jthread> pool;
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t per = (n_chunks + workers - 1) / workers;
  for (unsigned w = 0; w < workers; ++w) {
    const std::size_t lo = w * per;
    const std::size_t hi = std::min(n_chunks, lo + per);
    if (lo >= hi) break;
    pool.emplace_back([&, w, lo, hi] {
      try {
        fn(lo, hi);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  pool.clear();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Calls visit(draw_index_relative_to_first, noisy_input) for each draw.
template <typename Visit>
void visit_draws(std::span<const double> x, const NoiseStream& stream,
                 std::size_t chunk_offset, std::size_t first_draw,
                 std::size_t count, const SamplingOptions& opts, Visit&& visit) {
  stream.validate();
  if (count == 0) return;
  const std::size_t cs = stream.chunk_size;
  const std::size_t first_chunk = first_draw / cs;
  const std::size_t last_chunk = (first_draw + count - 1) / cs;
  const std::size_t dim = x.size();
  for_chunk_ranges(last_chunk - first_chunk + 1, opts.workers,
                   [&](std::size_t lo, std::size_t hi) {
                     std::vector<double> noisy(dim);
                     for (std::size_t c = first_chunk + lo; c < first_chunk + hi; ++c) {
                       const RowMatrixD noise = gaussian_chunk(stream, chunk_offset + c, dim);
                       const std::size_t begin = std::max(first_draw, c * cs);
                       const std::size_t end = std::min(first_draw + count, (c + 1) * cs);
                       for (std::size_t d = begin; d < end; ++d) {
                         const auto row = noise.row(static_cast<Eigen::Index>(d - c * cs));
                         for (std::size_t j = 0; j < dim; ++j) noisy[j] = x[j] + row[j];
                         visit(d - first_draw, std::span<const double>(noisy));
                       }
                     }
                   });
}

}  // namespace

void NoiseStream::validate() const {
  require(sigma > 0.0 && std::isfinite(sigma), ErrorCode::kInvalidArgument,
          "noise sigma must be > 0");
  require(chunk_size >= 1, ErrorCode::kInvalidArgument, "chunk_size must be >= 1");
}

std::uint64_t NoiseStream::fingerprint(std::size_t chunk_offset) const {
  rng::Fnv1a h;
  h.update_value(master_seed);
  h.update_value(sigma);
  h.update_value(static_cast<std::uint64_t>(chunk_size));
  h.update_value(static_cast<std::uint64_t>(chunk_offset));
  return h.digest();
}

ClassCounts ClassCounts::from_predictions(std::span<const std::uint32_t> preds,
                                          std::size_t num_classes) {
  ClassCounts out;
  out.counts.assign(num_classes, 0);
  for (auto p : preds) {
    require(p < num_classes, ErrorCode::kInvalidArgument, "prediction out of range");
    ++out.counts[p];
  }
  out.total = static_cast<std::int64_t>(preds.size());
  return out;
}

std::size_t ClassCounts::top() const {
  require(!counts.empty(), ErrorCode::kInvalidArgument, "empty counts");
  return static_cast<std::size_t>(
      std::max_element(counts.begin(), counts.end()) - counts.begin());
}

std::size_t chunks_for(std::size_t draws, std::size_t chunk_size) {
  return (draws + chunk_size - 1) / chunk_size;
}

std::size_t estimation_offset(std::size_t n0, std::size_t chunk_size) {
  return chunks_for(n0, chunk_size);
}

RowMatrixD gaussian_chunk(const NoiseStream& stream, std::uint64_t chunk_index,
                          std::size_t dim) {
  stream.validate();
  require(dim >= 1, ErrorCode::kInvalidArgument, "noise dim must be >= 1");
  RowMatrixD out(static_cast<Eigen::Index>(stream.chunk_size),
                 static_cast<Eigen::Index>(dim));
  rng::GaussianSource gauss(rng::derive_seed(stream.master_seed, chunk_index));
  double* p = out.data();
  for (Eigen::Index i = 0; i < out.size(); ++i) p[i] = stream.sigma * gauss.next();
  return out;
}

void encode_draws(const Encoder& enc, std::span<const double> x,
                  const NoiseStream& stream, std::size_t chunk_offset,
                  std::size_t first_draw, std::size_t count, RowMatrixF& out,
                  const SamplingOptions& opts) {
  require(enc.is_live(), ErrorCode::kEncoderUnavailable,
          "encoder is cache-only; cannot encode noisy draws");
  require(x.size() == enc.dim_in(), ErrorCode::kDimensionMismatch,
          "input length does not match encoder dim_in");
  require(out.rows() == static_cast<Eigen::Index>(count) &&
              out.cols() == static_cast<Eigen::Index>(enc.dim_out()),
          ErrorCode::kDimensionMismatch, "output matrix has the wrong shape");
  visit_draws(x, stream, chunk_offset, first_draw, count, opts,
              [&](std::size_t j, std::span<const double> noisy) {
                float* row = out.data() + j * enc.dim_out();
                enc.encode_into(noisy, std::span<float>(row, enc.dim_out()));
              });
}

std::vector<std::uint32_t> predict_draws(const Encoder& enc, const PromptHead& head,
                                         std::span<const double> x,
                                         const NoiseStream& stream,
                                         std::size_t chunk_offset,
                                         std::size_t first_draw, std::size_t count,
                                         const SamplingOptions& opts) {
  require(enc.is_live(), ErrorCode::kEncoderUnavailable,
          "encoder is cache-only; cannot sample under noise");
  require(x.size() == enc.dim_in(), ErrorCode::kDimensionMismatch,
          "input length does not match encoder dim_in");
  require(head.dim() == enc.dim_out(), ErrorCode::kDimensionMismatch,
          "prompt dim does not match encoder dim_out");
  std::vector<std::uint32_t> preds(count);
  visit_draws(x, stream, chunk_offset, first_draw, count, opts,
              [&](std::size_t j, std::span<const double> noisy) {
                thread_local Embedding emb;
                emb.resize(enc.dim_out());
                enc.encode_into(noisy, emb);
                preds[j] = static_cast<std::uint32_t>(predict(head, emb));
              });
  return preds;
}

ClassCounts sample_under_noise(const Encoder& enc, const PromptHead& head,
                               std::span<const double> x, std::size_t n,
                               const NoiseStream& stream, std::size_t chunk_offset,
                               const SamplingOptions& opts) {
  require(n >= 1, ErrorCode::kInvalidArgument, "sample count must be >= 1");
  const auto preds = predict_draws(enc, head, x, stream, chunk_offset, 0, n, opts);
  return ClassCounts::from_predictions(preds, head.num_classes());
}

PredictionTrace pred_under_noise(const Encoder& enc, const PromptHead& head,
                                 std::span<const double> x, std::size_t n,
                                 const NoiseStream& stream, std::size_t chunk_offset,
                                 const SamplingOptions& opts) {
  require(n >= 1, ErrorCode::kInvalidArgument, "sample count must be >= 1");
  PredictionTrace trace;
  trace.preds = predict_draws(enc, head, x, stream, chunk_offset, 0, n, opts);
  trace.stream_fingerprint = stream.fingerprint(chunk_offset);
  return trace;
}

std::pair<ClassCounts, ClassCounts> count_prediction(const RowMatrixF& emb_rows,
                                                     const PromptHead& head,
                                                     std::size_t n0, std::size_t n) {
  require(n0 >= 1 && n >= 1, ErrorCode::kInvalidArgument,
          "count_prediction needs n0 >= 1 and n >= 1");
  require(emb_rows.rows() == static_cast<Eigen::Index>(n0 + n),
          ErrorCode::kDimensionMismatch,
          "cache holds " + std::to_string(emb_rows.rows()) + " rows, expected " +
              std::to_string(n0 + n));
  require(emb_rows.cols() == static_cast<Eigen::Index>(head.dim()),
          ErrorCode::kDimensionMismatch, "cached embedding dim != prompt dim");
  const std::size_t dim = head.dim();
  const std::size_t k = head.num_classes();
  ClassCounts sel{std::vector<std::int64_t>(k, 0), static_cast<std::int64_t>(n0)};
  ClassCounts est{std::vector<std::int64_t>(k, 0), static_cast<std::int64_t>(n)};
  for (std::size_t r = 0; r < n0 + n; ++r) {
    const std::span<const float> emb(emb_rows.data() + r * dim, dim);
    const std::size_t c = predict(head, emb);
    ++(r < n0 ? sel : est).counts[c];
  }
  return {std::move(sel), std::move(est)};
}

}  // namespace ovc
