#include "ovc/certify.hpp"

#include <chrono>
#include <cmath>

#include "ovc/error.hpp"
#include "ovc/stats.hpp"

namespace ovc {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Decision {
  std::uint32_t top_class = 0;
  double p_a_lower = 0.0;
  stats::RadiusResult radius;
};

// Decision rule shared by every route: select on the small sample,
// bound on the large one, certify when the (optionally shrunk) bound > 1/2.
Decision decide(const ClassCounts& selection, const ClassCounts& estimation,
                double alpha, double sigma, double shrink = 1.0) {
  Decision d;
  d.top_class = static_cast<std::uint32_t>(selection.top());
  d.p_a_lower = shrink * stats::lower_conf_bound(estimation.counts[d.top_class],
                                                 estimation.total, 1.0 - alpha);
  d.radius = stats::radius_one_sided(d.p_a_lower, sigma);
  return d;
}

void apply(const Decision& d, Certificate& cert) {
  cert.p_a_lower = d.radius.p_a_lower;
  if (!d.radius.abstained()) {
    cert.predicted_class = d.top_class;
    cert.radius = d.radius.radius;
  }
}

void check_stream_matches(const CertConfig& cfg, const NoiseStream& stream) {
  stream.validate();
  require(stream.sigma == cfg.sigma, ErrorCode::kConfigInvalid,
          "noise stream sigma differs from the certification sigma");
}

void check_meta_matches(const CertMetaCache& meta, const CertConfig& cfg) {
  require(meta.sigma == cfg.sigma, ErrorCode::kSeedMismatch,
          "metadata cache was recorded at sigma " + std::to_string(meta.sigma) +
              ", certification uses " + std::to_string(cfg.sigma));
  require(meta.n0 == cfg.n0, ErrorCode::kSeedMismatch,
          "metadata cache was recorded with a different n0; the estimation "
          "draws would not line up");
}

PredictionTrace trace_prefix(std::span<const std::uint32_t> preds, std::size_t n_p,
                             std::uint64_t fingerprint) {
  PredictionTrace t;
  t.preds.assign(preds.begin(), preds.begin() + static_cast<std::ptrdiff_t>(n_p));
  t.stream_fingerprint = fingerprint;
  return t;
}

}  // namespace

void CertConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    require(ok, ErrorCode::kConfigInvalid, what);
  };
  check(sigma > 0.0 && std::isfinite(sigma), "sigma must be > 0");
  check(n0 >= 1, "n0 must be >= 1");
  check(n >= 1, "n must be >= 1");
  check(n_p >= 1 && n_p <= n, "n_p must lie in [1, n]");
  check(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
  check(alpha_zeta > 0.0 && alpha + alpha_zeta < 1.0,
        "alpha_zeta must be > 0 with alpha + alpha_zeta < 1");
  check(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
}

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kStandard: return "STANDARD";
    case Method::kModifiedIrsFast: return "MODIFIED_IRS_FAST";
    case Method::kModifiedIrsFallback: return "MODIFIED_IRS_FALLBACK";
    case Method::kOvc: return "OVC";
    case Method::kMvnOvc: return "MVN_OVC";
  }
  return "UNKNOWN";
}

Method method_from_string(std::string_view s) {
  for (Method m : {Method::kStandard, Method::kModifiedIrsFast,
                   Method::kModifiedIrsFallback, Method::kOvc, Method::kMvnOvc}) {
    if (to_string(m) == s) return m;
  }
  fail(ErrorCode::kCorruptRecord, "unknown method tag '" + std::string(s) + "'");
}

bool same_decision(const Certificate& a, const Certificate& b) {
  return a.input_id == b.input_id && a.predicted_class == b.predicted_class &&
         a.radius == b.radius && a.p_a_lower == b.p_a_lower &&
         a.confidence == b.confidence;
}

Certificate certify_standard(const Encoder& enc, const PromptHead& head,
                             std::span<const double> x, std::uint64_t input_id,
                             const CertConfig& cfg, const NoiseStream& stream,
                             const SamplingOptions& opts, CertMetaCache* meta) {
  cfg.validate();
  check_stream_matches(cfg, stream);
  const auto t0 = Clock::now();
  const std::size_t offset = estimation_offset(cfg.n0, stream.chunk_size);

  const auto sel = predict_draws(enc, head, x, stream, 0, 0, cfg.n0, opts);
  const auto est = predict_draws(enc, head, x, stream, offset, 0, cfg.n, opts);
  const auto d = decide(ClassCounts::from_predictions(sel, head.num_classes()),
                        ClassCounts::from_predictions(est, head.num_classes()),
                        cfg.alpha, cfg.sigma);

  Certificate cert;
  cert.input_id = input_id;
  cert.prompt_id = head.prompt_id();
  cert.method = Method::kStandard;
  cert.confidence = 1.0 - cfg.alpha;
  cert.samples_used = cfg.n0 + cfg.n;
  cert.encoder_calls = cfg.n0 + cfg.n;
  apply(d, cert);

  if (meta != nullptr) {
    require(meta->master_seed == stream.master_seed && meta->sigma == stream.sigma &&
                meta->chunk_size == stream.chunk_size && meta->n0 == cfg.n0,
            ErrorCode::kSeedMismatch, "metadata cache belongs to a different noise stream");
    meta->record({head.prompt_id(), trace_prefix(est, cfg.n_p, stream.fingerprint(offset)),
                  d.p_a_lower, d.top_class});
  }
  cert.wall_time = seconds_since(t0);
  return cert;
}

double estimate_zeta(const PredictionTrace& trace_novel,
                     const PredictionTrace& trace_known, std::size_t n_p,
                     double alpha_zeta) {
  require(trace_novel.stream_fingerprint == trace_known.stream_fingerprint,
          ErrorCode::kFingerprintMismatch,
          "traces come from different noise streams and cannot be compared");
  require(n_p >= 1 && trace_novel.size() >= n_p && trace_known.size() >= n_p,
          ErrorCode::kInvalidArgument, "traces shorter than n_p");
  require(alpha_zeta > 0.0 && alpha_zeta < 1.0, ErrorCode::kInvalidArgument,
          "alpha_zeta must lie in (0, 1)");
  std::int64_t diff = 0;
  for (std::size_t j = 0; j < n_p; ++j) {
    diff += trace_novel.preds[j] != trace_known.preds[j];
  }
  return stats::upper_conf_bound(diff, static_cast<std::int64_t>(n_p), 1.0 - alpha_zeta);
}

Certificate certify_modified_irs(const Encoder& enc, const PromptHead& head_novel,
                                 std::span<const double> x, std::uint64_t input_id,
                                 const CertConfig& cfg, const CertMetaCache& meta,
                                 const SamplingOptions& opts) {
  cfg.validate();
  require(!meta.entries.empty(), ErrorCode::kEmptyCache,
          "no known prompt has been certified for input " + std::to_string(input_id));
  check_meta_matches(meta, cfg);
  require(meta.input_id == input_id, ErrorCode::kSeedMismatch,
          "metadata cache belongs to input " + std::to_string(meta.input_id));
  const auto t0 = Clock::now();
  const NoiseStream stream = meta.stream();
  const std::size_t offset = estimation_offset(cfg.n0, stream.chunk_size);

  const PredictionTrace novel =
      pred_under_noise(enc, head_novel, x, cfg.n_p, stream, offset, opts);

  const CertMetaEntry* best = nullptr;
  std::int64_t best_diff = 0;
  for (const auto& [id, entry] : meta.entries) {
    require(entry.trace.stream_fingerprint == novel.stream_fingerprint,
            ErrorCode::kSeedMismatch, "cached trace for '" + id + "' is on other noise");
    require(entry.trace.size() >= cfg.n_p, ErrorCode::kInvalidArgument,
            "cached trace for '" + id + "' is shorter than n_p");
    std::int64_t diff = 0;
    for (std::size_t j = 0; j < cfg.n_p; ++j) diff += entry.trace.preds[j] != novel.preds[j];
    if (best == nullptr || diff < best_diff) {
      best = &entry;
      best_diff = diff;
    }
  }

  Certificate cert;
  cert.input_id = input_id;
  cert.prompt_id = head_novel.prompt_id();
  cert.confidence = 1.0 - (cfg.alpha + cfg.alpha_zeta);
  IrsMatch match{best->prompt_id, best_diff, cfg.n_p,
                 estimate_zeta(novel, best->trace, cfg.n_p, cfg.alpha_zeta)};

  const double fraction = static_cast<double>(best_diff) / static_cast<double>(cfg.n_p);
  if (fraction > cfg.gamma) {
    // Full certification at alpha + alpha_zeta, on the same draws a fresh
    // standard run would use.
    const auto sel = predict_draws(enc, head_novel, x, stream, 0, 0, cfg.n0, opts);
    std::vector<std::uint32_t> est = novel.preds;
    if (cfg.n > cfg.n_p) {
      const auto rest =
          predict_draws(enc, head_novel, x, stream, offset, cfg.n_p, cfg.n - cfg.n_p, opts);
      est.insert(est.end(), rest.begin(), rest.end());
    }
    const auto d = decide(ClassCounts::from_predictions(sel, head_novel.num_classes()),
                          ClassCounts::from_predictions(est, head_novel.num_classes()),
                          cfg.alpha + cfg.alpha_zeta, cfg.sigma);
    cert.method = Method::kModifiedIrsFallback;
    cert.samples_used = cfg.n0 + cfg.n;
    cert.encoder_calls = cfg.n0 + cfg.n;
    apply(d, cert);
  } else {
    const auto r = stats::radius_irs(best->p_a_lower, match.zeta_x, cfg.sigma);
    cert.method = Method::kModifiedIrsFast;
    cert.samples_used = cfg.n_p;
    cert.encoder_calls = cfg.n_p;
    cert.p_a_lower = r.p_a_lower;
    if (!r.abstained()) {
      cert.predicted_class = best->c_a;
      cert.radius = r.radius;
    }
  }
  cert.irs = std::move(match);
  cert.wall_time = seconds_since(t0);
  return cert;
}

Certificate certify_ovc(const PromptHead& head_novel, std::uint64_t input_id,
                        const CertConfig& cfg, const EmbeddingCache& cache,
                        CertMetaCache* meta) {
  cfg.validate();
  require(cache.input_id == input_id, ErrorCode::kCacheMiss,
          "embedding cache holds input " + std::to_string(cache.input_id) +
              ", not " + std::to_string(input_id));
  require(cache.fingerprint() ==
              embedding_fingerprint(cache.master_seed, cfg.sigma, cache.chunk_size,
                                    cfg.n0, cfg.n),
          ErrorCode::kFingerprintMismatch,
          "embedding cache was built for different (sigma, n0, n)");
  const auto t0 = Clock::now();
  const auto [sel, est] = count_prediction(cache.rows, head_novel, cfg.n0, cfg.n);
  const auto d = decide(sel, est, cfg.alpha, cfg.sigma);

  Certificate cert;
  cert.input_id = input_id;
  cert.prompt_id = head_novel.prompt_id();
  cert.method = Method::kOvc;
  cert.confidence = 1.0 - cfg.alpha;
  cert.samples_used = cfg.n0 + cfg.n;
  cert.encoder_calls = 0;
  apply(d, cert);

  if (meta != nullptr) {
    require(meta->master_seed == cache.master_seed && meta->sigma == cache.sigma &&
                meta->chunk_size == cache.chunk_size && meta->n0 == cfg.n0,
            ErrorCode::kSeedMismatch, "metadata cache belongs to a different noise stream");
    std::vector<std::uint32_t> preds(cfg.n_p);
    const std::size_t dim = cache.dim();
    for (std::size_t j = 0; j < cfg.n_p; ++j) {
      const float* row = cache.rows.data() + (cfg.n0 + j) * dim;
      preds[j] = static_cast<std::uint32_t>(predict(head_novel, {row, dim}));
    }
    meta->record({head_novel.prompt_id(),
                  trace_prefix(preds, cfg.n_p, meta->trace_fingerprint()), d.p_a_lower,
                  d.top_class});
  }
  cert.wall_time = seconds_since(t0);
  return cert;
}

Certificate certify_mvn_ovc(const PromptHead& head_novel, std::uint64_t input_id,
                            const CertConfig& cfg, const MvnParams& mvn,
                            std::uint64_t sample_seed) {
  cfg.validate();
  require(mvn.dim() > 0, ErrorCode::kMvnMissing, "no mvn parameters for input " +
                                                     std::to_string(input_id));
  require(mvn.input_id == input_id && mvn.sigma == cfg.sigma,
          ErrorCode::kFingerprintMismatch,
          "mvn parameters were fitted for a different (input, sigma)");
  const auto t0 = Clock::now();
  const MvnParams logit_space = transform_mvn(head_novel, mvn);
  const RowMatrixD rows = sample_mvn(logit_space, cfg.n0 + cfg.n, sample_seed);

  const std::size_t k = head_novel.num_classes();
  ClassCounts sel{std::vector<std::int64_t>(k, 0), static_cast<std::int64_t>(cfg.n0)};
  ClassCounts est{std::vector<std::int64_t>(k, 0), static_cast<std::int64_t>(cfg.n)};
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const std::size_t c = argmax({rows.data() + r * rows.cols(), k});
    ++(static_cast<std::size_t>(r) < cfg.n0 ? sel : est).counts[c];
  }
  const auto d = decide(sel, est, cfg.alpha, cfg.sigma, kMvnCorrection);

  Certificate cert;
  cert.input_id = input_id;
  cert.prompt_id = head_novel.prompt_id();
  cert.method = Method::kMvnOvc;
  cert.heuristic = true;
  cert.confidence = 1.0 - cfg.alpha;
  cert.samples_used = cfg.n0 + cfg.n;
  cert.encoder_calls = 0;
  apply(d, cert);
  cert.wall_time = seconds_since(t0);
  return cert;
}

Certificate certify_irs_base(const Encoder& enc, const PromptHead& head_approx,
                             std::span<const double> x, std::uint64_t input_id,
                             const CertConfig& cfg, const CertMetaCache& meta,
                             const std::string& base_prompt_id, double pa_threshold,
                             const SamplingOptions& opts) {
  cfg.validate();
  require(!meta.entries.empty(), ErrorCode::kEmptyCache, "metadata cache is empty");
  check_meta_matches(meta, cfg);
  const auto it = meta.entries.find(base_prompt_id);
  require(it != meta.entries.end(), ErrorCode::kCacheMiss,
          "no cached certification for base prompt '" + base_prompt_id + "'");
  const CertMetaEntry& base = it->second;
  const auto t0 = Clock::now();
  const NoiseStream stream = meta.stream();
  const std::size_t offset = estimation_offset(cfg.n0, stream.chunk_size);

  Certificate cert;
  cert.input_id = input_id;
  cert.prompt_id = head_approx.prompt_id();
  cert.confidence = 1.0 - (cfg.alpha + cfg.alpha_zeta);
  cert.samples_used = cfg.n_p;
  cert.encoder_calls = cfg.n_p;

  if (base.p_a_lower < pa_threshold) {
    const PredictionTrace trace =
        pred_under_noise(enc, head_approx, x, cfg.n_p, stream, offset, opts);
    IrsMatch match{base_prompt_id, 0, cfg.n_p, 0.0};
    for (std::size_t j = 0; j < cfg.n_p; ++j) {
      match.disagreement_count += trace.preds[j] != base.trace.preds.at(j);
    }
    match.zeta_x = estimate_zeta(trace, base.trace, cfg.n_p, cfg.alpha_zeta);
    const auto r = stats::radius_irs(base.p_a_lower, match.zeta_x, cfg.sigma);
    cert.method = Method::kModifiedIrsFast;
    cert.p_a_lower = r.p_a_lower;
    if (!r.abstained()) {
      cert.predicted_class = base.c_a;
      cert.radius = r.radius;
    }
    cert.irs = std::move(match);
  } else {
    const ClassCounts counts =
        sample_under_noise(enc, head_approx, x, cfg.n_p, stream, offset, opts);
    const double p = stats::lower_conf_bound(counts.counts.at(base.c_a), counts.total,
                                             1.0 - (cfg.alpha + cfg.alpha_zeta));
    const auto r = stats::radius_one_sided(p, cfg.sigma);
    cert.method = Method::kModifiedIrsFallback;
    cert.p_a_lower = r.p_a_lower;
    if (!r.abstained()) {
      cert.predicted_class = base.c_a;
      cert.radius = r.radius;
    }
  }
  cert.wall_time = seconds_since(t0);
  return cert;
}

}  // namespace ovc
