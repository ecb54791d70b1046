#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>

#include "ovc/app/commands.hpp"
#include "ovc/app/dataset.hpp"
#include "ovc/app/records.hpp"
#include "ovc/app/report.hpp"
#include "ovc/error.hpp"

using namespace ovc;
using namespace ovc::app;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("ovc_app_test_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("no ovc::Error thrown");
  return ErrorCode::kIo;
}

SyntheticParams small_params() {
  SyntheticParams p;
  p.seed = 3;
  p.num_classes = 4;
  p.dim = 16;
  p.dim_in = 8;
  p.hidden = 16;
  p.n_inputs = 6;
  p.n_prompts = 5;
  p.n_novel = 2;
  p.jitter = 0.05;
  return p;
}

RunOptions small_run(const fs::path& root) {
  RunOptions o;
  o.data_dir = root / "data";
  o.out_dir = root / "out";
  o.cache_dir = root / "cache";
  o.cfg.n0 = 20;
  o.cfg.n = 300;
  o.cfg.n_p = 200;
  o.cfg.gamma = 0.05;
  o.seed = 11;
  o.quiet = true;
  return o;
}

CertificateRecord rec(std::uint64_t id, const std::string& prompt, std::optional<double> radius,
                      std::optional<std::int32_t> label, std::uint32_t cls = 0,
                      const std::string& mode = "standard") {
  CertificateRecord r;
  r.cert.input_id = id;
  r.cert.prompt_id = prompt;
  if (radius) {
    r.cert.radius = radius;
    r.cert.predicted_class = cls;
  }
  r.cert.wall_time = 1.0;
  r.mode = mode;
  r.sigma = 0.25;
  r.label = label;
  return r;
}

// Record lines with the wall-time field dropped.
std::vector<std::string> content_of(const fs::path& p) {
  std::vector<std::string> out;
  for (auto r : read_records(p)) {
    r.cert.wall_time = 0.0;
    out.push_back(to_json_line(r));
  }
  return out;
}

}  // namespace

TEST_CASE("synthetic datasets are reproducible and self-consistent") {
  TempDir a("gen_a"), b("gen_b");
  gen_synthetic(small_params(), a.path);
  gen_synthetic(small_params(), b.path);
  for (const char* f : {"dataset.json", "inputs.ovci", "prompts/p00.ovcp", "prompts/p04.ovcp"}) {
    CHECK(slurp(a.path / f) == slurp(b.path / f));
  }
  const Dataset ds = load_dataset(a.path);
  CHECK(ds.n_inputs == 6);
  CHECK(ds.known.size() == 3);
  CHECK(ds.novel.size() == 2);
  CHECK(ds.prompts.size() == 5);
  CHECK(ds.content_hash() == load_dataset(b.path).content_hash());
  const Encoder enc = ds.make_encoder();
  for (std::size_t i = 0; i < ds.n_inputs; ++i) {
    REQUIRE(ds.label(i).has_value());
    CHECK(*ds.label(i) == static_cast<std::int32_t>(predict(ds.prompts.at("p00"),
                                                            enc.encode(ds.input(i)))));
  }

  SyntheticParams other = small_params();
  other.seed = 4;
  TempDir c("gen_c");
  gen_synthetic(other, c.path);
  CHECK(load_dataset(c.path).content_hash() != ds.content_hash());
  CHECK(code_of([&] { load_dataset(a.path / "missing"); }) == ErrorCode::kCacheMiss);
}

TEST_CASE("certificate records round trip") {
  CertificateRecord r = rec(9, "p03", 0.4125, 2, 2, "irs");
  r.cert.p_a_lower = 0.93;
  r.cert.confidence = 0.998;
  r.cert.method = Method::kModifiedIrsFast;
  r.cert.samples_used = 10'000;
  r.cert.encoder_calls = 10'000;
  r.cert.irs = IrsMatch{"p01", 12, 10'000, 0.0021};
  r.manifest_hash = "00ff";
  const CertificateRecord back = parse_record(to_json_line(r));
  CHECK(to_json_line(back) == to_json_line(r));
  CHECK(back.cert.irs->sim_prompt_id == "p01");
  CHECK(back.cert.radius == r.cert.radius);

  const CertificateRecord abstain = rec(1, "p00", std::nullopt, std::nullopt);
  const std::string line = to_json_line(abstain);
  CHECK(line.find("\"ABSTAIN\"") != std::string::npos);
  CHECK(parse_record(line).cert.abstained());

  CHECK(code_of([] { parse_record("{not json"); }) == ErrorCode::kCorruptRecord);
  CHECK(code_of([] { parse_record("{\"input_id\":1}"); }) == ErrorCode::kCorruptRecord);

  TempDir dir("records");
  CHECK(read_records(dir.path / "none.jsonl").empty());
  append_records(dir.path / "r.jsonl", {r, abstain});
  append_records(dir.path / "r.jsonl", {abstain});
  CHECK(read_records(dir.path / "r.jsonl").size() == 3);
}

TEST_CASE("certified accuracy curve is a step function") {
  const std::vector<CertificateRecord> one{rec(0, "p", 0.5, 0)};
  const auto c = certified_accuracy_curve(one);
  REQUIRE(c.size() == 2);
  CHECK(c[0].radius == 0.0);
  CHECK(c[0].fraction == 1.0);
  CHECK(c[1].radius == 0.5);
  CHECK(c[1].fraction == 1.0);

  const std::vector<CertificateRecord> mixed{rec(0, "p", 0.5, 0), rec(1, "p", 0.2, 1, 1),
                                             rec(2, "p", 0.9, 1, 0),  // wrong class
                                             rec(3, "p", std::nullopt, 0)};
  const auto m = certified_accuracy_curve(mixed);
  REQUIRE(m.size() == 4);
  CHECK(m[0].fraction == 0.5);
  CHECK(m[1].radius == 0.2);
  CHECK(m[1].fraction == 0.5);
  CHECK(m[2].radius == 0.5);
  CHECK(m[2].fraction == 0.25);
  CHECK(m[3].fraction == 0.0);
}

TEST_CASE("report pairs modes against standard") {
  std::vector<CertificateRecord> all{rec(0, "p", 0.5, 0), rec(1, "p", 0.3, 0)};
  auto o0 = rec(0, "p", 0.5, 0, 0, "ovc");
  o0.cert.wall_time = 0.1;
  auto o1 = rec(1, "p", 0.3, 0, 0, "ovc");
  o1.cert.wall_time = 0.1;
  auto m0 = rec(0, "p", 0.45, 0, 0, "mvn");
  auto m1 = rec(1, "p", std::nullopt, 0, 0, "mvn");
  all.insert(all.end(), {o0, o1, m0, m1});
  const auto j = build_report(all);
  CHECK(j["diagonal"]["ovc"]["on"] == 2);
  CHECK(j["diagonal"]["mvn"]["below"] == 2);
  CHECK(j["diagonal"]["mvn"]["above"] == 0);
  CHECK(j["speedup"]["ovc"]["speedup"].get<double>() == doctest::Approx(10.0));
  CHECK(j["speedup"]["ovc"]["pairs"] == 2);
  CHECK(j["curves"].contains("standard"));
}

TEST_CASE("irs speedup is reported marginal and amortized") {
  // Input 0: known prompts k1, k2 (1 s each) and novel prompt n (1 s standard).
  std::vector<CertificateRecord> all{rec(0, "k1", 0.5, 0), rec(0, "k2", 0.5, 0),
                                     rec(0, "n", 0.5, 0), rec(1, "k1", 0.5, 0)};
  auto irs = rec(0, "n", 0.5, 0, 0, "irs");
  irs.cert.wall_time = 0.5;
  all.push_back(irs);
  const auto s = build_report(all)["speedup"]["irs"];
  CHECK(s["speedup"].get<double>() == doctest::Approx(2.0));
  CHECK(s["known_prompt_wall"].get<double>() == doctest::Approx(2.0));
  CHECK(s["amortized_speedup"].get<double>() == doctest::Approx(1.0 / 2.5));
}

TEST_CASE("end-to-end pipeline on a small synthetic dataset") {
  TempDir root("pipeline");
  gen_synthetic(small_params(), root.path / "data");
  RunOptions o = small_run(root.path);

  CHECK(code_of([&] { cmd_certify("ovc", o); }) == ErrorCode::kCacheMiss);
  CHECK(code_of([&] { cmd_certify("irs", o); }) == ErrorCode::kCacheMiss);
  CHECK(code_of([&] { cmd_certify("cohen", o); }) == ErrorCode::kConfigInvalid);

  CHECK(cmd_build_cache(o) == 6);
  CHECK(cmd_build_cache(o) == 0);  // idempotent
  CHECK(cmd_fit_mvn(o) == 6);
  const auto ovce = fs::file_size(embedding_path(o.cache_dir, 0, 0.25));
  const auto ovcm = fs::file_size(mvn_path(o.cache_dir, 0, 0.25));
  CHECK(ovce == embedding_cache_file_size(20, 300, 16));
  CHECK(ovcm == mvn_file_size(16));

  o.prompts = "all";
  const CertifySummary std_sum = cmd_certify("standard", o);
  CHECK(std_sum.records == 30);
  CHECK(std_sum.encoder_calls == 30 * 320);
  CHECK(std_sum.encoder_calls_counted == std_sum.encoder_calls);
  CHECK(fs::exists(meta_path(o.cache_dir, 0, 0.25)));
  CHECK(load_cert_meta(meta_path(o.cache_dir, 0, 0.25)).entries.size() == 3);

  const CertifySummary ovc_sum = cmd_certify("ovc", o);
  CHECK(ovc_sum.records == 30);
  CHECK(ovc_sum.encoder_calls == 0);
  CHECK(ovc_sum.encoder_calls_counted == 0);
  const auto std_recs = read_records(records_path(o.out_dir, "standard"));
  const auto ovc_recs = read_records(records_path(o.out_dir, "ovc"));
  REQUIRE(std_recs.size() == ovc_recs.size());
  for (std::size_t i = 0; i < std_recs.size(); ++i) {
    CHECK(std_recs[i].cert.input_id == ovc_recs[i].cert.input_id);
    CHECK(std_recs[i].cert.prompt_id == ovc_recs[i].cert.prompt_id);
    CHECK(same_decision(std_recs[i].cert, ovc_recs[i].cert));
  }

  const CertifySummary mvn_sum = cmd_certify("mvn", o);
  CHECK(mvn_sum.encoder_calls_counted == 0);
  for (const auto& r : read_records(records_path(o.out_dir, "mvn"))) CHECK(r.cert.heuristic);

  o.prompts = "";
  const CertifySummary irs_sum = cmd_certify("irs", o);
  CHECK(irs_sum.records == 12);  // 6 inputs x 2 novel prompts
  CHECK(irs_sum.encoder_calls_counted == irs_sum.encoder_calls);
  CHECK(fs::exists(o.out_dir / "summary_irs.json"));

  const auto report = cmd_report({records_path(o.out_dir, "standard"),
                                  records_path(o.out_dir, "ovc"),
                                  records_path(o.out_dir, "mvn")});
  CHECK(report["diagonal"]["ovc"]["on"] == 30);
  CHECK(report["diagonal"]["ovc"]["above"] == 0);

  o.prompts = "all";
  const CertifySummary again = cmd_certify("standard", o);
  CHECK(again.records == 0);
  CHECK(again.resumed == 30);
  CHECK(read_records(records_path(o.out_dir, "standard")).size() == 30);
}

TEST_CASE("identical manifests give identical records regardless of worker count") {
  TempDir root("manifest");
  gen_synthetic(small_params(), root.path / "data");
  RunOptions a = small_run(root.path);
  a.out_dir = root.path / "out_a";
  a.cache_dir = root.path / "cache_a";
  RunOptions b = a;
  b.out_dir = root.path / "out_b";
  b.cache_dir = root.path / "cache_b";
  b.workers = 3;
  cmd_certify("standard", a);
  cmd_certify("standard", b);
  const auto ca = content_of(records_path(a.out_dir, "standard"));
  CHECK(ca.size() == 30);
  CHECK(ca == content_of(records_path(b.out_dir, "standard")));
  CHECK(slurp(meta_path(a.cache_dir, 2, 0.25)) == slurp(meta_path(b.cache_dir, 2, 0.25)));

  RunOptions c = a;
  c.seed = 12;
  CHECK(manifest_hash(c, load_dataset(c.data_dir)) != manifest_hash(a, load_dataset(a.data_dir)));
}

TEST_CASE("cache directory resolution and input selection") {
  RunOptions o;
  o.cache_dir = "explicit";
  CHECK(resolve_cache_dir(o) == fs::path("explicit"));
  o.cache_dir.clear();
  setenv("OVC_CACHE_DIR", "/tmp/from_env", 1);
  CHECK(resolve_cache_dir(o) == fs::path("/tmp/from_env"));
  unsetenv("OVC_CACHE_DIR");
  CHECK(resolve_cache_dir(o) == fs::path("ovc_cache"));

  CHECK(selected_inputs(10, 1).size() == 10);
  CHECK(selected_inputs(10, 3) == std::vector<std::size_t>{0, 3, 6, 9});
  CHECK(input_seed(1, 2) != input_seed(1, 3));
  CHECK(embedding_path("c", 4, 0.25) != embedding_path("c", 4, 0.5));
}
