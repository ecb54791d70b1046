#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>

#include <Eigen/SVD>

#include "ovc/cache.hpp"
#include "ovc/error.hpp"

using namespace ovc;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("ovc_cache_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no ovc::Error thrown");
  return ErrorCode::kIo;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

Eigen::MatrixXd random_spd(std::mt19937_64& gen, Eigen::Index d) {
  std::normal_distribution<double> g;
  Eigen::MatrixXd a(d, d);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(gen);
  return a * a.transpose() / static_cast<double>(d) + 0.1 * Eigen::MatrixXd::Identity(d, d);
}

EmbeddingCache tiny_cache() {
  SyntheticEncoderSpec spec;
  spec.dim_in = 5;
  spec.widths = {6};
  spec.weight_seed = 17;
  const Encoder enc = Encoder::synthetic(spec);
  const std::vector<double> x{0.1, -0.2, 0.3, 0.0, 0.5};
  return build_embedding_cache(enc, x, 42, 7, 33, {99, 0.25, 16});
}

}  // namespace

TEST_CASE("embedding cache rows are the identity encoder's noisy inputs") {
  const Encoder enc = Encoder::identity(3);
  const std::vector<double> x{1.0, -2.0, 0.5};
  const NoiseStream s{5, 0.5, 4};
  const EmbeddingCache c = build_embedding_cache(enc, x, 1, 6, 9, s);
  CHECK(enc.eval_count() == 15);
  REQUIRE(c.rows.rows() == 15);
  const std::size_t off = estimation_offset(6, 4);
  CHECK(off == 2);
  for (Eigen::Index r = 0; r < 15; ++r) {
    const bool sel = r < 6;
    const std::size_t j = sel ? static_cast<std::size_t>(r) : static_cast<std::size_t>(r - 6);
    const RowMatrixD chunk = gaussian_chunk(s, (sel ? 0 : off) + j / 4, 3);
    for (Eigen::Index d = 0; d < 3; ++d) {
      const double expected = x[d] + chunk(static_cast<Eigen::Index>(j % 4), d);
      CHECK(c.rows(r, d) == static_cast<float>(expected));
    }
  }
}

TEST_CASE("OVCE round trip, byte-identical rebuilds and exact file size") {
  TempDir dir("ovce");
  const EmbeddingCache c = tiny_cache();
  write_embedding_cache(dir.path / "a.ovce", c);
  write_embedding_cache(dir.path / "b.ovce", tiny_cache());
  CHECK(slurp(dir.path / "a.ovce") == slurp(dir.path / "b.ovce"));
  CHECK(fs::file_size(dir.path / "a.ovce") == embedding_cache_file_size(7, 33, 6));

  const EmbeddingCache back = load_embedding_cache(dir.path / "a.ovce");
  CHECK(back.input_id == 42);
  CHECK(back.sigma == 0.25);
  CHECK(back.master_seed == 99);
  CHECK(back.chunk_size == 16);
  CHECK(back.n0 == 7);
  CHECK(back.n == 33);
  CHECK(back.rows == c.rows);
  CHECK(back.fingerprint() == c.fingerprint());
}

TEST_CASE("OVCE corruption is detected") {
  TempDir dir("ovce_bad");
  const fs::path p = dir.path / "c.ovce";
  write_embedding_cache(p, tiny_cache());
  const std::string good = slurp(p);

  std::string flipped = good;
  flipped[100] ^= 0x01;  // inside the row payload
  spit(p, flipped);
  CHECK(code_of([&] { load_embedding_cache(p); }) == ErrorCode::kChecksumMismatch);

  spit(p, good.substr(0, good.size() - 20));
  CHECK(code_of([&] { load_embedding_cache(p); }) == ErrorCode::kTruncation);

  spit(p, good.substr(0, 30));
  CHECK(code_of([&] { load_embedding_cache(p); }) == ErrorCode::kTruncation);

  spit(p, good + "x");
  CHECK(code_of([&] { load_embedding_cache(p); }) == ErrorCode::kCorruptRecord);

  std::string magic = good;
  magic[3] = 'M';
  spit(p, magic);
  CHECK(code_of([&] { load_embedding_cache(p); }) == ErrorCode::kMagicMismatch);

  std::string version = good;
  version[4] = 2;
  spit(p, version);
  CHECK(code_of([&] { load_embedding_cache(p); }) == ErrorCode::kVersionUnsupported);

  std::string sigma = good;
  sigma[16] ^= 0x10;  // a header field covered by the fingerprint
  spit(p, sigma);
  CHECK(code_of([&] { load_embedding_cache(p); }) == ErrorCode::kFingerprintMismatch);

  CHECK(code_of([&] { load_embedding_cache(dir.path / "absent.ovce"); }) ==
        ErrorCode::kCacheMiss);
}

TEST_CASE("embedding fingerprint covers every stream parameter") {
  const auto base = embedding_fingerprint(1, 0.25, 400, 100, 1000);
  CHECK(base != embedding_fingerprint(2, 0.25, 400, 100, 1000));
  CHECK(base != embedding_fingerprint(1, 0.5, 400, 100, 1000));
  CHECK(base != embedding_fingerprint(1, 0.25, 200, 100, 1000));
  CHECK(base != embedding_fingerprint(1, 0.25, 400, 101, 1000));
  CHECK(base != embedding_fingerprint(1, 0.25, 400, 100, 1001));
}

TEST_CASE("storage sizes at full scale") {
  // 100,100 f32 rows of D = 1024 is about 409.6 MB; n = 50,000 halves it.
  const double full = static_cast<double>(embedding_cache_file_size(100, 100'000, 1024));
  CHECK(full / 1e6 == doctest::Approx(410.0).epsilon(0.001));
  const double half = static_cast<double>(embedding_cache_file_size(100, 50'000, 1024));
  CHECK(half / 1e6 == doctest::Approx(205.2).epsilon(0.001));
  // One mean and one covariance in f32 at D = 1024: about 4.2 MB.
  CHECK(static_cast<double>(mvn_file_size(1024)) / 1e6 == doctest::Approx(4.2).epsilon(0.002));
  for (std::uint64_t d : {64, 512, 1024}) {
    const double ratio = static_cast<double>(mvn_file_size(d)) /
                         static_cast<double>(embedding_cache_file_size(100, 1000, d));
    CHECK(ratio == doctest::Approx((d + 1.0) / 1100.0).epsilon(0.1));
  }
}

TEST_CASE("fit_mvn recovers known parameters") {
  std::mt19937_64 gen(1);
  const Eigen::Index d = 4;
  const Eigen::MatrixXd sigma0 = random_spd(gen, d);
  Eigen::VectorXd mu0(d);
  mu0 << 1.0, -2.0, 0.5, 3.0;
  const MvnParams truth{0, 0.0, mu0, sigma0, 0, 0.0};
  const RowMatrixD rows = sample_mvn(truth, 100'000, 77);
  const MvnParams fit = fit_mvn(Eigen::MatrixXd(rows));
  CHECK(fit.fit_sample_count == 100'000);
  CHECK(fit.jitter_applied == 0.0);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double se = std::sqrt(sigma0(i, i) / 100'000.0);
    CHECK(std::fabs(fit.mean[i] - mu0[i]) <= 5 * se);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double se_c = std::sqrt((sigma0(i, j) * sigma0(i, j) + sigma0(i, i) * sigma0(j, j)) /
                                    100'000.0);
      CHECK(std::fabs(fit.cov(i, j) - sigma0(i, j)) <= 5 * se_c);
    }
  }
  CHECK((fit.cov - fit.cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fit_mvn degenerate inputs") {
  RowMatrixF same(5, 3);
  for (Eigen::Index r = 0; r < 5; ++r) same.row(r) << 1.5f, -2.0f, 0.25f;
  const MvnParams m = fit_mvn(same);
  CHECK(m.mean[0] == 1.5);
  CHECK(m.mean[1] == -2.0);
  CHECK(m.mean[2] == 0.25);
  CHECK(m.cov.isZero(0.0));
  CHECK(m.jitter_applied > 0.0);

  RowMatrixF two(2, 3);
  two << 0, 1, 2, 2, 1, 0;
  const MvnParams r1 = fit_mvn(two);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(r1.cov);
  CHECK(svd.singularValues()[1] < 1e-12);
  CHECK(r1.jitter_applied > 0.0);
  const CholeskyFactor f = cholesky_with_jitter(r1.cov);
  CHECK(f.jitter > 0.0);
  CHECK((f.lower * f.lower.transpose() - r1.cov).cwiseAbs().maxCoeff() <= 1e-2 * r1.cov.trace());

  CHECK(code_of([] { fit_mvn(RowMatrixF(1, 3)); }) == ErrorCode::kInsufficientSamples);
}

TEST_CASE("cholesky jitter escalation") {
  const CholeskyFactor z = cholesky_with_jitter(Eigen::MatrixXd::Zero(3, 3));
  CHECK(z.lower.isZero(0.0));
  CHECK(z.jitter == 0.0);

  Eigen::MatrixXd spd(2, 2);
  spd << 2, 1, 1, 2;
  const CholeskyFactor ok = cholesky_with_jitter(spd);
  CHECK(ok.jitter == 0.0);
  CHECK((ok.lower * ok.lower.transpose() - spd).norm() < 1e-12);

  Eigen::MatrixXd indefinite(2, 2);
  indefinite << 1, 0, 0, -1;
  CHECK(code_of([&] { cholesky_with_jitter(indefinite); }) == ErrorCode::kNonPsd);
  Eigen::MatrixXd slightly(2, 2);
  slightly << 1, 0, 0, -0.001;
  const CholeskyFactor fixed = cholesky_with_jitter(slightly);
  CHECK(fixed.jitter > 0.001);
  CHECK(fixed.jitter <= 1e-2 * slightly.trace());

  Eigen::MatrixXd strongly(2, 2);
  strongly << 1, 0, 0, -0.5;
  CHECK(code_of([&] { cholesky_with_jitter(strongly); }) == ErrorCode::kNonPsd);
}

TEST_CASE("transform_mvn") {
  std::mt19937_64 gen(4);
  const Eigen::Index d = 5;
  MvnParams mvn{3, 0.5, Eigen::VectorXd::Random(d), random_spd(gen, d), 10, 0.0};

  std::vector<float> eye(d * d, 0.0f);
  for (Eigen::Index i = 0; i < d; ++i) eye[i * d + i] = 1.0f;
  const MvnParams same = transform_mvn(PromptHead("eye", d, eye), mvn);
  CHECK(same.mean == mvn.mean);
  CHECK(same.cov == mvn.cov);
  CHECK(same.input_id == 3);
  CHECK(same.sigma == 0.5);

  const PromptHead two("two", d, {1, 2, 0, 0, -1, 0, 0, 3, 1, 1});
  const MvnParams t = transform_mvn(two, mvn);
  CHECK(t.dim() == 2);
  for (Eigen::Index k = 0; k < 2; ++k) CHECK(t.cov(k, k) >= 0.0);
  CHECK(code_of([&] { transform_mvn(PromptHead("x", 3, std::vector<float>(6, 1.0f)), mvn); }) ==
        ErrorCode::kDimensionMismatch);
}

TEST_CASE("fitting then transforming equals transforming then fitting") {
  std::mt19937_64 gen(8);
  std::normal_distribution<float> g;
  RowMatrixF rows(3000, 6);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = g(gen) + 0.1f * (i % 6);
  std::vector<float> p(4 * 6);
  for (auto& v : p) v = g(gen);
  const PromptHead head("p", 6, p);
  const Eigen::MatrixXd pm =
      Eigen::Map<const RowMatrixF>(head.data().data(), 4, 6).cast<double>();

  const MvnParams a = transform_mvn(head, fit_mvn(rows));
  const Eigen::MatrixXd logits = rows.cast<double>() * pm.transpose();
  const MvnParams b = fit_mvn(logits);
  for (Eigen::Index i = 0; i < 4; ++i) {
    CHECK(a.mean[i] == doctest::Approx(b.mean[i]).epsilon(1e-6));
    for (Eigen::Index j = 0; j < 4; ++j) {
      CHECK(a.cov(i, j) == doctest::Approx(b.cov(i, j)).epsilon(1e-6));
    }
  }
}

TEST_CASE("sample_mvn") {
  MvnParams zero{0, 0.1, Eigen::Vector3d(1, 2, 3), Eigen::MatrixXd::Zero(3, 3), 0, 0.0};
  const RowMatrixD z = sample_mvn(zero, 50, 1);
  for (Eigen::Index r = 0; r < 50; ++r) CHECK(z.row(r) == Eigen::RowVector3d(1, 2, 3));

  MvnParams unit{0, 0.1, Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1), 0, 0.0};
  const RowMatrixD u = sample_mvn(unit, 1'000'000, 9);
  const double mean = u.mean();
  const double sd = std::sqrt((u.array() - mean).square().sum() / (u.rows() - 1));
  CHECK(std::fabs(mean) < 5e-3);      // 5 standard errors
  CHECK(std::fabs(sd - 1.0) < 3.6e-3);  // 5 standard errors of the sd
  CHECK(sample_mvn(unit, 100, 9) == u.topRows(100));
  CHECK(sample_mvn(unit, 100, 9) != sample_mvn(unit, 100, 10));
}

TEST_CASE("OVCM round trip and corruption") {
  TempDir dir("ovcm");
  std::mt19937_64 gen(2);
  MvnParams mvn{11, 0.25, Eigen::VectorXd::Random(8), random_spd(gen, 8), 1100, 3e-7};
  const fs::path p = dir.path / "m.ovcm";
  write_mvn(p, mvn);
  CHECK(fs::file_size(p) == mvn_file_size(8));
  const MvnParams back = load_mvn(p);
  CHECK(back.input_id == 11);
  CHECK(back.sigma == 0.25);
  CHECK(back.fit_sample_count == 1100);
  CHECK(back.jitter_applied == 3e-7);
  CHECK(back.mean == mvn.mean.cast<float>().cast<double>());
  CHECK(back.cov == mvn.cov.cast<float>().cast<double>());

  std::string bytes = slurp(p);
  bytes[60] ^= 0x40;
  spit(p, bytes);
  CHECK(code_of([&] { load_mvn(p); }) == ErrorCode::kChecksumMismatch);
}

TEST_CASE("OVCP round trip and validation") {
  TempDir dir("ovcp");
  const PromptHead h("prompt-7", 3, {1, 2, 2, 0, 0, 5}, {"cat", "dog"});
  const fs::path p = dir.path / "h.ovcp";
  write_prompt_head(p, h);
  const PromptHead back = load_prompt_head(p);
  CHECK(back == h);
  CHECK(back.labels()[1] == "dog");

  std::string bytes = slurp(p);
  bytes[bytes.size() - 9] ^= 0x01;  // last label character
  spit(p, bytes);
  CHECK(code_of([&] { load_prompt_head(p); }) == ErrorCode::kChecksumMismatch);

  // A writer that skipped normalization: valid framing, bad rows.
  ByteWriter w;
  w.put_bytes("OVCP", 4);
  w.put(kFormatVersion);
  w.put(std::uint64_t{2});
  w.put(std::uint64_t{2});
  w.put_string("raw");
  const float rows[] = {2, 0, 0, 1};
  w.put_bytes(rows, sizeof rows);
  w.put_string("a");
  w.put_string("b");
  w.finish();
  spit(p, w.bytes());
  CHECK(code_of([&] { load_prompt_head(p); }) == ErrorCode::kCorruptRecord);
}

TEST_CASE("cert metadata store") {
  TempDir dir("meta");
  CertMetaCache meta{4, 0.5, 1234, 400, 100, {}};
  const auto fp = meta.trace_fingerprint();
  CHECK(fp == NoiseStream{1234, 0.5, 400}.fingerprint(1));
  meta.record({"p02", {{1, 1, 0, 2}, fp}, 0.93, 1});
  meta.record({"p01", {{0, 0, 0, 0}, fp}, 0.71, 0});
  meta.record({"p02", {{1, 1, 1, 2}, fp}, 0.94, 1});
  CHECK(meta.entries.size() == 2);
  CHECK(meta.entries.begin()->first == "p01");
  CHECK(meta.entries.at("p02").p_a_lower == 0.94);

  CHECK(code_of([&] { meta.record({"p09", {{0}, fp + 1}, 0.9, 0}); }) ==
        ErrorCode::kSeedMismatch);

  const fs::path p = dir.path / "x4.jsonl";
  store_cert_meta(p, meta);
  const CertMetaCache back = load_cert_meta(p);
  CHECK(back.input_id == 4);
  CHECK(back.sigma == 0.5);
  CHECK(back.master_seed == 1234);
  CHECK(back.n0 == 100);
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries.at("p02").trace == meta.entries.at("p02").trace);
  CHECK(back.entries.at("p02").p_a_lower == 0.94);
  CHECK(back.entries.at("p01").c_a == 0);

  CHECK(code_of([&] { load_cert_meta(dir.path / "none.jsonl"); }) == ErrorCode::kCacheMiss);
  spit(p, "{\"kind\":\"header\",\"input_id\":4\n");
  CHECK(code_of([&] { load_cert_meta(p); }) == ErrorCode::kCorruptRecord);
  spit(p, "{\"kind\":\"prompt\"}\n");
  CHECK(code_of([&] { load_cert_meta(p); }) == ErrorCode::kCorruptRecord);
  spit(p, "");
  CHECK(code_of([&] { load_cert_meta(p); }) == ErrorCode::kCorruptRecord);
}
