#include "ovc/model.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <Eigen/Core>

#include "ovc/error.hpp"
#include "ovc/rng.hpp"

namespace ovc {
namespace {

std::vector<float> random_unit_rows(rng::GaussianSource& gauss, std::size_t k,
                                    std::size_t dim) {
  std::vector<float> rows(k * dim);
  std::vector<double> tmp(dim);
  for (std::size_t r = 0; r < k; ++r) {
    double norm2 = 0.0;
    for (auto& v : tmp) {
      v = gauss.next();
      norm2 += v * v;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t j = 0; j < dim; ++j) {
      rows[r * dim + j] = static_cast<float>(tmp[j] * inv);
    }
  }
  return rows;
}

}  // namespace

PromptHead::PromptHead(std::string prompt_id, std::size_t dim,
                       std::vector<float> rows, std::vector<std::string> labels)
    : prompt_id_(std::move(prompt_id)),
      dim_(dim),
      rows_(std::move(rows)),
      labels_(std::move(labels)) {
  require(dim_ >= 1, ErrorCode::kInvalidArgument, "prompt dim must be >= 1");
  require(rows_.size() % dim_ == 0, ErrorCode::kDimensionMismatch,
          "prompt rows are not a multiple of dim");
  const std::size_t k = rows_.size() / dim_;
  require(k >= 2, ErrorCode::kInvalidArgument, "a prompt head needs K >= 2");
  for (std::size_t r = 0; r < k; ++r) {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      const double v = rows_[r * dim_ + j];
      norm2 += v * v;
    }
    require(norm2 > 0.0 && std::isfinite(norm2), ErrorCode::kInvalidArgument,
            "prompt row " + std::to_string(r) + " has zero or non-finite norm");
    const double norm = std::sqrt(norm2);
    if (std::fabs(norm - 1.0) > 1e-7) {
      for (std::size_t j = 0; j < dim_; ++j) {
        rows_[r * dim_ + j] = static_cast<float>(rows_[r * dim_ + j] / norm);
      }
    }
  }
  if (labels_.empty()) {
    for (std::size_t r = 0; r < k; ++r) labels_.push_back("class" + std::to_string(r));
  }
  require(labels_.size() == k, ErrorCode::kDimensionMismatch,
          "label count does not match K");
}

Logits logits(const PromptHead& head, std::span<const float> emb) {
  if (emb.size() != head.dim()) {
    fail(ErrorCode::kDimensionMismatch, "embedding length " + std::to_string(emb.size()) +
                                            " != prompt dim " + std::to_string(head.dim()));
  }
  Logits out;
  out.values.resize(head.num_classes());
  for (std::size_t k = 0; k < head.num_classes(); ++k) {
    const auto row = head.row(k);
    double acc = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      acc += static_cast<double>(row[j]) * static_cast<double>(emb[j]);
    }
    out.values[k] = acc;
  }
  return out;
}

std::size_t argmax(std::span<const double> values) {
  require(!values.empty(), ErrorCode::kInvalidArgument, "argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::size_t predict(const PromptHead& head, std::span<const float> emb) {
  if (emb.size() != head.dim()) {
    fail(ErrorCode::kDimensionMismatch, "embedding length " + std::to_string(emb.size()) +
                                            " != prompt dim " + std::to_string(head.dim()));
  }
  // Same arithmetic as logits() followed by argmax(), without the allocation.
  std::size_t best = 0;
  double best_value = 0.0;
  for (std::size_t k = 0; k < head.num_classes(); ++k) {
    const auto row = head.row(k);
    double acc = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      acc += static_cast<double>(row[j]) * static_cast<double>(emb[j]);
    }
    if (k == 0 || acc > best_value) {
      best = k;
      best_value = acc;
    }
  }
  return best;
}

double prompt_similarity(const PromptHead& a, const PromptHead& b) {
  require(a.num_classes() == b.num_classes() && a.dim() == b.dim(),
          ErrorCode::kDimensionMismatch, "prompt heads differ in shape");
  const auto da = a.data();
  const auto db = b.data();
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < da.size(); ++i) {
    dot += static_cast<double>(da[i]) * db[i];
    na += static_cast<double>(da[i]) * da[i];
    nb += static_cast<double>(db[i]) * db[i];
  }
  require(na > 0.0 && nb > 0.0, ErrorCode::kInvalidArgument,
          "cosine similarity of a zero vector");
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

std::vector<PromptHead> make_synthetic_family(std::uint64_t seed,
                                              std::size_t n_prompts,
                                              std::size_t num_classes,
                                              std::size_t dim, double jitter) {
  require(n_prompts >= 2, ErrorCode::kInvalidArgument, "n_prompts must be >= 2");
  require(jitter >= 0.0, ErrorCode::kInvalidArgument, "jitter must be >= 0");
  rng::GaussianSource base_gauss(rng::derive_seed(seed, 0));
  const std::vector<float> base = random_unit_rows(base_gauss, num_classes, dim);

  std::vector<PromptHead> family;
  family.reserve(n_prompts);
  auto id_of = [](std::size_t i) {
    std::string s = std::to_string(i);
    return "p" + std::string(s.size() < 2 ? 2 - s.size() : 0, '0') + s;
  };
  family.emplace_back(id_of(0), dim, base);
  const double scale = jitter / std::sqrt(static_cast<double>(dim));
  for (std::size_t p = 1; p < n_prompts; ++p) {
    rng::GaussianSource gauss(rng::derive_seed(seed, p));
    std::vector<float> rows(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      rows[i] = static_cast<float>(base[i] + scale * gauss.next());
    }
    family.emplace_back(id_of(p), dim, std::move(rows));
  }
  return family;
}

Encoder Encoder::identity(std::size_t dim) {
  require(dim >= 1, ErrorCode::kInvalidArgument, "dim must be >= 1");
  DenseLayer layer;
  layer.in = dim;
  layer.out = dim;
  layer.weights.assign(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) layer.weights[i * dim + i] = 1.0;
  layer.bias.assign(dim, 0.0);
  layer.activation = Activation::kIdentity;
  std::vector<DenseLayer> layers;
  layers.push_back(std::move(layer));
  return from_layers(std::move(layers));
}

Encoder Encoder::synthetic(const SyntheticEncoderSpec& spec) {
  require(spec.dim_in >= 1 && !spec.widths.empty(), ErrorCode::kInvalidArgument,
          "synthetic encoder needs dim_in >= 1 and at least one layer");
  rng::GaussianSource gauss(rng::derive_seed(spec.weight_seed, 0xe7c0de));
  std::vector<DenseLayer> layers;
  std::size_t fan_in = spec.dim_in;
  for (std::size_t width : spec.widths) {
    require(width >= 1, ErrorCode::kInvalidArgument, "layer width must be >= 1");
    DenseLayer layer;
    layer.in = fan_in;
    layer.out = width;
    layer.activation = spec.activation;
    layer.weights.resize(width * fan_in);
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& w : layer.weights) w = gauss.next() * scale;
    layer.bias.resize(width);
    for (auto& b : layer.bias) b = gauss.next() * spec.bias_scale;
    layers.push_back(std::move(layer));
    fan_in = width;
  }
  return from_layers(std::move(layers));
}

Encoder Encoder::from_layers(std::vector<DenseLayer> layers) {
  require(!layers.empty(), ErrorCode::kInvalidArgument, "encoder needs layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    require(l.weights.size() == l.in * l.out && l.bias.size() == l.out,
            ErrorCode::kDimensionMismatch, "malformed dense layer");
    if (i > 0) {
      require(l.in == layers[i - 1].out, ErrorCode::kDimensionMismatch,
              "consecutive layer widths do not chain");
    }
  }
  Encoder enc;
  enc.dim_in_ = layers.front().in;
  enc.dim_out_ = layers.back().out;
  enc.layers_ = std::move(layers);
  return enc;
}

Encoder Encoder::cache_only(std::size_t dim_in, std::size_t dim_out) {
  Encoder enc;
  enc.dim_in_ = dim_in;
  enc.dim_out_ = dim_out;
  return enc;
}

Embedding Encoder::encode(std::span<const double> x) const {
  Embedding out(dim_out_);
  encode_into(x, out);
  return out;
}

void Encoder::encode_into(std::span<const double> x, std::span<float> out) const {
  require(is_live(), ErrorCode::kEncoderUnavailable,
          "encoder is cache-only; live encoding is not possible");
  if (x.size() != dim_in_) {
    fail(ErrorCode::kDimensionMismatch, "input length " + std::to_string(x.size()) +
                                            " != encoder dim_in " + std::to_string(dim_in_));
  }
  require(out.size() == dim_out_, ErrorCode::kDimensionMismatch,
          "output buffer does not match encoder dim_out");

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  thread_local Eigen::VectorXd cur;
  thread_local Eigen::VectorXd next;
  cur = Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  for (const auto& layer : layers_) {
    const auto rows = static_cast<Eigen::Index>(layer.out);
    const auto cols = static_cast<Eigen::Index>(layer.in);
    next.noalias() = Eigen::Map<const RowMat>(layer.weights.data(), rows, cols) * cur;
    next += Eigen::Map<const Eigen::VectorXd>(layer.bias.data(), rows);
    if (layer.activation == Activation::kTanh) next = next.array().tanh();
    cur.swap(next);
  }
  for (std::size_t j = 0; j < dim_out_; ++j) out[j] = static_cast<float>(cur[j]);
  if (padding_.count() > 0) std::this_thread::sleep_for(padding_);
  counter_->fetch_add(1, std::memory_order_relaxed);
}

}  // namespace ovc
