#include "ovc/app/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include "ovc/binary_io.hpp"
#include "ovc/cache.hpp"
#include "ovc/error.hpp"
#include "ovc/rng.hpp"

namespace ovc::app {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagicInputs[4] = {'O', 'V', 'C', 'I'};

json encoder_to_json(const SyntheticEncoderSpec& spec) {
  return {{"dim_in", spec.dim_in},
          {"widths", spec.widths},
          {"activation", spec.activation == Activation::kTanh ? "tanh" : "identity"},
          {"weight_seed", spec.weight_seed},
          {"bias_scale", spec.bias_scale}};
}

SyntheticEncoderSpec encoder_from_json(const json& j) {
  SyntheticEncoderSpec spec;
  spec.dim_in = j.at("dim_in").get<std::size_t>();
  spec.widths = j.at("widths").get<std::vector<std::size_t>>();
  const auto act = j.at("activation").get<std::string>();
  require(act == "tanh" || act == "identity", ErrorCode::kCorruptRecord,
          "unknown activation '" + act + "'");
  spec.activation = act == "tanh" ? Activation::kTanh : Activation::kIdentity;
  spec.weight_seed = j.at("weight_seed").get<std::uint64_t>();
  spec.bias_scale = j.at("bias_scale").get<double>();
  return spec;
}

}  // namespace

void write_inputs(const fs::path& path, const RowMatrixD& inputs,
                  const std::vector<std::int32_t>& labels) {
  require(labels.size() == static_cast<std::size_t>(inputs.rows()),
          ErrorCode::kDimensionMismatch, "one label per input required");
  ByteWriter w;
  w.put_bytes(kMagicInputs, 4);
  w.put(kFormatVersion);
  w.put(static_cast<std::uint64_t>(inputs.rows()));
  w.put(static_cast<std::uint64_t>(inputs.cols()));
  w.put_bytes(inputs.data(), sizeof(double) * static_cast<std::size_t>(inputs.size()));
  w.put_bytes(labels.data(), sizeof(std::int32_t) * labels.size());
  w.finish();
  write_atomically(path, w.bytes());
}

void load_inputs(const fs::path& path, RowMatrixD& inputs,
                 std::vector<std::int32_t>& labels) {
  ByteReader r(read_file(path), path);
  r.expect_magic(kMagicInputs);
  const auto count = r.get<std::uint64_t>("count");
  const auto dim = r.get<std::uint64_t>("dim_in");
  require(dim >= 1 && count * dim < (1ULL << 32), ErrorCode::kCorruptRecord,
          path.string() + ": implausible input dimensions");
  inputs.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  r.get_bytes(inputs.data(), sizeof(double) * count * dim, "inputs");
  labels.resize(count);
  r.get_bytes(labels.data(), sizeof(std::int32_t) * count, "labels");
  r.verify_checksum();
}

void gen_synthetic(const SyntheticParams& params, const fs::path& dir) {
  require(params.n_inputs >= 1, ErrorCode::kInvalidArgument, "n_inputs must be >= 1");
  require(params.num_classes >= 2, ErrorCode::kInvalidArgument, "K must be >= 2");
  require(params.dim >= 1 && params.dim_in >= 1 && params.hidden >= 1,
          ErrorCode::kInvalidArgument, "dimensions must be >= 1");
  require(params.n_prompts >= 2, ErrorCode::kInvalidArgument, "n_prompts must be >= 2");
  const std::size_t n_novel =
      params.n_novel > 0 ? params.n_novel : std::max<std::size_t>(1, params.n_prompts / 8);
  require(n_novel < params.n_prompts, ErrorCode::kInvalidArgument,
          "need at least one known prompt");

  SyntheticEncoderSpec enc_spec;
  enc_spec.dim_in = params.dim_in;
  enc_spec.widths = {params.hidden, params.dim};
  enc_spec.weight_seed = rng::derive_seed(params.seed, 1);
  const Encoder encoder = Encoder::synthetic(enc_spec);

  auto family = make_synthetic_family(rng::derive_seed(params.seed, 2), params.n_prompts,
                                      params.num_classes, params.dim, params.jitter);

  RowMatrixD inputs(static_cast<Eigen::Index>(params.n_inputs),
                    static_cast<Eigen::Index>(params.dim_in));
  rng::GaussianSource gauss(rng::derive_seed(params.seed, 3));
  for (Eigen::Index i = 0; i < inputs.size(); ++i) {
    inputs.data()[i] = params.input_scale * gauss.next();
  }
  // Ground truth is the clean prediction of the base prompt head.
  std::vector<std::int32_t> labels(params.n_inputs);
  for (std::size_t i = 0; i < params.n_inputs; ++i) {
    const std::span<const double> x(inputs.data() + i * params.dim_in, params.dim_in);
    labels[i] = static_cast<std::int32_t>(predict(family.front(), encoder.encode(x)));
  }

  // Random known/novel split.
  std::vector<std::size_t> order(params.n_prompts);
  std::iota(order.begin(), order.end(), 0);
  rng::SplitMix64 bits(rng::derive_seed(params.seed, 4));
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[bits.next() % i]);
  }
  std::vector<std::string> novel;
  std::vector<std::string> known;
  for (std::size_t i = 0; i < order.size(); ++i) {
    (i < n_novel ? novel : known).push_back(family[order[i]].prompt_id());
  }
  std::sort(novel.begin(), novel.end());
  std::sort(known.begin(), known.end());

  fs::create_directories(dir / "prompts");
  std::vector<std::string> ids;
  for (const auto& head : family) {
    write_prompt_head(dir / "prompts" / (head.prompt_id() + ".ovcp"), head);
    ids.push_back(head.prompt_id());
  }
  write_inputs(dir / "inputs.ovci", inputs, labels);

  json spec = {{"generator", "synthetic"},
               {"seed", params.seed},
               {"K", params.num_classes},
               {"D", params.dim},
               {"dim_in", params.dim_in},
               {"n_inputs", params.n_inputs},
               {"jitter", params.jitter},
               {"input_scale", params.input_scale},
               {"encoder", encoder_to_json(enc_spec)},
               {"prompts", ids},
               {"known", known},
               {"novel", novel}};
  write_atomically(dir / "dataset.json", spec.dump(2) + "\n");
}

Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.root = dir;
  try {
    ds.spec = json::parse(read_file(dir / "dataset.json"));
    if (ds.spec.contains("encoder") && !ds.spec.at("encoder").is_null()) {
      ds.encoder_spec = encoder_from_json(ds.spec.at("encoder"));
    }
    ds.known = ds.spec.at("known").get<std::vector<std::string>>();
    ds.novel = ds.spec.at("novel").get<std::vector<std::string>>();
    ds.n_inputs = ds.spec.at("n_inputs").get<std::size_t>();
  } catch (const json::exception& ex) {
    fail(ErrorCode::kCorruptRecord, (dir / "dataset.json").string() + ": " + ex.what());
  }
  for (const auto& id : ds.known) {
    require(std::find(ds.novel.begin(), ds.novel.end(), id) == ds.novel.end(),
            ErrorCode::kConfigInvalid, "prompt '" + id + "' is both known and novel");
  }
  for (const auto* group : {&ds.known, &ds.novel}) {
    for (const auto& id : *group) {
      ds.prompts.emplace(id, load_prompt_head(dir / "prompts" / (id + ".ovcp")));
    }
  }
  if (fs::exists(dir / "inputs.ovci")) {
    load_inputs(dir / "inputs.ovci", ds.inputs, ds.labels);
    require(static_cast<std::size_t>(ds.inputs.rows()) == ds.n_inputs,
            ErrorCode::kCorruptRecord, "inputs.ovci row count differs from dataset.json");
  }
  return ds;
}

Encoder Dataset::make_encoder() const {
  if (encoder_spec && inputs.size() > 0) return Encoder::synthetic(*encoder_spec);
  const std::size_t dim_out = prompts.empty() ? 0 : prompts.begin()->second.dim();
  return Encoder::cache_only(spec.value("dim_in", std::size_t{0}), dim_out);
}

std::span<const double> Dataset::input(std::size_t i) const {
  require(inputs.size() > 0, ErrorCode::kEncoderUnavailable,
          "dataset has no input vectors (cache-only)");
  require(i < static_cast<std::size_t>(inputs.rows()), ErrorCode::kInvalidArgument,
          "input index out of range");
  return {inputs.data() + i * static_cast<std::size_t>(inputs.cols()),
          static_cast<std::size_t>(inputs.cols())};
}

std::optional<std::int32_t> Dataset::label(std::size_t i) const {
  if (i >= labels.size() || labels[i] < 0) return std::nullopt;
  return labels[i];
}

std::uint64_t Dataset::content_hash() const {
  rng::Fnv1a h;
  const std::string s = spec.dump();
  h.update(s.data(), s.size());
  return h.digest();
}

}  // namespace ovc::app
