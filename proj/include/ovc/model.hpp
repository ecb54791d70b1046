#pragma once

// Zero-shot classifier pieces: an image encoder producing embeddings and a
// prompt head whose rows are class-prompt embeddings.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ovc {

using Embedding = std::vector<float>;

/// K x D matrix of unit-norm prompt embeddings plus display labels.
class PromptHead {
 public:
  PromptHead() = default;

  /// `rows` is row-major K x dim. Rows are rescaled to unit L2 norm; a zero
  /// row is rejected. Labels default to "class<i>" when empty.
  PromptHead(std::string prompt_id, std::size_t dim, std::vector<float> rows,
             std::vector<std::string> labels = {});

  std::size_t num_classes() const { return dim_ == 0 ? 0 : rows_.size() / dim_; }
  std::size_t dim() const { return dim_; }
  const std::string& prompt_id() const { return prompt_id_; }
  const std::vector<std::string>& labels() const { return labels_; }
  std::span<const float> row(std::size_t k) const {
    return std::span<const float>(rows_).subspan(k * dim_, dim_);
  }
  std::span<const float> data() const { return rows_; }

  bool operator==(const PromptHead&) const = default;

 private:
  std::string prompt_id_;
  std::size_t dim_ = 0;
  std::vector<float> rows_;
  std::vector<std::string> labels_;
};

struct Logits {
  std::vector<double> values;
};

/// values[i] = <P_i, emb>, accumulated in double in index order.
Logits logits(const PromptHead& head, std::span<const float> emb);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

std::size_t predict(const PromptHead& head, std::span<const float> emb);

/// Cosine similarity of the two heads' row-concatenated K*D vectors.
double prompt_similarity(const PromptHead& a, const PromptHead& b);

/// A random unit-row base head followed by n_prompts - 1 jittered copies:
/// each row becomes normalize(row + jitter * g) with g ~ N(0, I / D).
/// Prompt ids are "p00", "p01", ...
std::vector<PromptHead> make_synthetic_family(std::uint64_t seed,
                                              std::size_t n_prompts,
                                              std::size_t num_classes,
                                              std::size_t dim, double jitter);

enum class Activation { kIdentity, kTanh };

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> bias;     // out
  Activation activation = Activation::kIdentity;
};

struct SyntheticEncoderSpec {
  std::size_t dim_in = 32;
  std::vector<std::size_t> widths{64, 64};  // last entry is the embedding dim
  Activation activation = Activation::kTanh;
  std::uint64_t weight_seed = 0;
  double bias_scale = 0.1;
};

/// Image encoder. Either a small dense network (pure and deterministic in its
/// weights and input) or a cache-only marker standing in for an encoder whose
/// outputs exist only in embedding caches.
///
/// Every live encode bumps an atomic call counter, so instrumented runs can
/// audit exactly how many encoder evaluations a routine performed.
class Encoder {
 public:
  static Encoder identity(std::size_t dim);
  static Encoder synthetic(const SyntheticEncoderSpec& spec);
  static Encoder from_layers(std::vector<DenseLayer> layers);
  static Encoder cache_only(std::size_t dim_in, std::size_t dim_out);

  std::size_t dim_in() const { return dim_in_; }
  std::size_t dim_out() const { return dim_out_; }
  bool is_live() const { return !layers_.empty(); }
  std::uint64_t eval_count() const { return counter_->load(); }

  /// Sleeps this long inside every encode call; simulates an expensive
  /// backbone for timing experiments.
  void set_call_padding(std::chrono::microseconds pad) { padding_ = pad; }

  Embedding encode(std::span<const double> x) const;
  void encode_into(std::span<const double> x, std::span<float> out) const;

 private:
  Encoder() : counter_(std::make_unique<std::atomic<std::uint64_t>>(0)) {}

  std::size_t dim_in_ = 0;
  std::size_t dim_out_ = 0;
  std::vector<DenseLayer> layers_;
  std::chrono::microseconds padding_{0};
  std::unique_ptr<std::atomic<std::uint64_t>> counter_;
};

}  // namespace ovc
