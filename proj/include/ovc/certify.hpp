#pragma once

// Certification routines: standard randomized smoothing, the Modified-IRS
// prompt-reuse scheme, cached-embedding certification (OVC), the MVN
// heuristic, and the plain IRS skeleton kept for regression comparisons.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "ovc/cache.hpp"
#include "ovc/model.hpp"
#include "ovc/noise.hpp"

namespace ovc {

struct CertConfig {
  double sigma = 0.25;
  std::size_t n0 = 100;
  std::size_t n = 10'000;
  std::size_t n_p = 10'000;
  double alpha = 0.001;
  double alpha_zeta = 0.001;
  double gamma = 0.01;

  /// Throws config-invalid on violated invariants (n_p <= n, gamma in (0,1), ...).
  void validate() const;
};

enum class Method { kStandard, kModifiedIrsFast, kModifiedIrsFallback, kOvc, kMvnOvc };

std::string_view to_string(Method m);
Method method_from_string(std::string_view s);

struct IrsMatch {
  std::string sim_prompt_id;
  std::int64_t disagreement_count = 0;
  std::size_t n_p = 0;
  double zeta_x = 0.0;
};

struct Certificate {
  std::uint64_t input_id = 0;
  std::string prompt_id;
  std::optional<std::uint32_t> predicted_class;  // nullopt = ABSTAIN
  std::optional<double> radius;
  double p_a_lower = 0.0;
  double confidence = 0.0;
  Method method = Method::kStandard;
  bool heuristic = false;  // MVN-OVC: not a sound certificate
  std::uint64_t samples_used = 0;
  std::uint64_t encoder_calls = 0;
  double wall_time = 0.0;  // seconds
  std::optional<IrsMatch> irs;

  bool abstained() const { return !predicted_class.has_value(); }
};

/// Certificate fields that must agree between two routes (everything except
/// method, cost accounting and timing).
bool same_decision(const Certificate& a, const Certificate& b);

/// Standard CERTIFY: top class from an n0-draw selection sample, Clopper-
/// Pearson p_A from a disjoint n-draw estimation sample at confidence 1 -
/// alpha. If `meta` is given, the first n_p estimation predictions, p_A and
/// the selected class are recorded for this prompt.
Certificate certify_standard(const Encoder& enc, const PromptHead& head,
                             std::span<const double> x, std::uint64_t input_id,
                             const CertConfig& cfg, const NoiseStream& stream,
                             const SamplingOptions& opts = {},
                             CertMetaCache* meta = nullptr);

/// Upper confidence bound on the probability that two prompts disagree,
/// from the first n_p entries of two traces on the same noise.
double estimate_zeta(const PredictionTrace& trace_novel,
                     const PredictionTrace& trace_known, std::size_t n_p,
                     double alpha_zeta);

/// Modified-IRS. Replays the input's noise for n_p draws under the novel
/// prompt, picks the known prompt with the fewest disagreements (lowest id on
/// ties), and either reuses its p_A discounted by zeta (fast path) or falls
/// back to full certification at confidence 1 - alpha - alpha_zeta. The
/// fallback reuses the n_p replayed predictions as the head of its
/// estimation sample.
Certificate certify_modified_irs(const Encoder& enc, const PromptHead& head_novel,
                                 std::span<const double> x, std::uint64_t input_id,
                                 const CertConfig& cfg, const CertMetaCache& meta,
                                 const SamplingOptions& opts = {});

/// Certification from cached embeddings: no encoder calls, and the same
/// certificate certify_standard produces on the cache's noise stream.
Certificate certify_ovc(const PromptHead& head_novel, std::uint64_t input_id,
                        const CertConfig& cfg, const EmbeddingCache& cache,
                        CertMetaCache* meta = nullptr);

/// Heuristic: sample n0 + n logit rows from the fitted embedding MVN pushed
/// through the head, apply the standard decision rule, and shrink p_A by 1%
/// before the abstain test and radius.
Certificate certify_mvn_ovc(const PromptHead& head_novel, std::uint64_t input_id,
                            const CertConfig& cfg, const MvnParams& mvn,
                            std::uint64_t sample_seed);

inline constexpr double kMvnCorrection = 0.99;

/// Original IRS for one approximated model against a single cached base
/// prompt: when the cached p_A is below `pa_threshold`, reuse it discounted
/// by zeta; otherwise re-estimate p_A from n_p replayed draws at confidence
/// 1 - (alpha + alpha_zeta).
Certificate certify_irs_base(const Encoder& enc, const PromptHead& head_approx,
                             std::span<const double> x, std::uint64_t input_id,
                             const CertConfig& cfg, const CertMetaCache& meta,
                             const std::string& base_prompt_id, double pa_threshold,
                             const SamplingOptions& opts = {});

}  // namespace ovc
