#include "ovc/app/commands.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <set>
#include <thread>

#include "ovc/app/report.hpp"
#include "ovc/cache.hpp"
#include "ovc/error.hpp"
#include "ovc/rng.hpp"

namespace ovc::app {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string sigma_tag(double sigma) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", sigma);
  return buf;
}

std::string cache_name(std::uint64_t input_id, double sigma, const char* ext) {
  return "x" + std::to_string(input_id) + "_s" + sigma_tag(sigma) + ext;
}

NoiseStream stream_for(const RunOptions& opts, std::uint64_t input_id) {
  return {input_seed(opts.seed, input_id), opts.cfg.sigma, opts.chunk_size};
}

std::uint64_t mvn_sample_seed(const RunOptions& opts, std::uint64_t input_id,
                              const std::string& prompt_id) {
  rng::Fnv1a h;
  h.update(prompt_id.data(), prompt_id.size());
  return rng::derive_seed(rng::derive_seed(input_seed(opts.seed, input_id), 0x6d766e),
                          h.digest());
}

std::vector<std::string> prompt_set(const Dataset& ds, const std::string& which) {
  if (which == "known") return ds.known;
  if (which == "novel") return ds.novel;
  if (which == "all") {
    std::vector<std::string> all = ds.known;
    all.insert(all.end(), ds.novel.begin(), ds.novel.end());
    return all;
  }
  fail(ErrorCode::kConfigInvalid, "--prompts must be known, novel or all");
}

// Runs task(i) for i in [0, count) on `workers` threads and hands results to
// sink(i, result) in index order.
template <typename Task, typename Sink>
void run_ordered(std::size_t count, unsigned workers, Task&& task, Sink&& sink) {
  using Result = decltype(task(std::size_t{0}));
  std::vector<std::optional<Result>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  std::mutex mu;
  std::size_t next_flush = 0;
  std::atomic<std::size_t> next_task{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next_task.fetch_add(1);
      if (i >= count) return;
      std::optional<Result> r;
      std::exception_ptr err;
      try {
        r = task(i);
      } catch (...) {
        err = std::current_exception();
      }
      std::lock_guard lock(mu);
      slots[i] = std::move(r);
      errors[i] = err;
      while (next_flush < count && (slots[next_flush] || errors[next_flush])) {
        if (errors[next_flush]) std::rethrow_exception(errors[next_flush]);
        sink(next_flush, std::move(*slots[next_flush]));
        slots[next_flush].reset();
        ++next_flush;
      }
    }
  };
  workers = std::max(1u, workers);
  if (workers == 1) {
    worker();
    return;
  }
  std::vector<std::exception_ptr> thread_errors(workers);
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          worker();
        } catch (...) {
          thread_errors[w] = std::current_exception();
          next_task.store(count);
        }
      });
    }
  }
  for (auto& e : thread_errors) {
    if (e) std::rethrow_exception(e);
  }
}

void progress(const RunOptions& opts, const std::string& what, std::size_t done,
              std::size_t total) {
  if (opts.quiet) return;
  std::cerr << "[" << what << "] " << done << "/" << total << "\n";
}

Dataset load_for(const RunOptions& opts) {
  require(!opts.data_dir.empty(), ErrorCode::kConfigInvalid, "--data is required");
  opts.cfg.validate();
  require(opts.skip >= 1, ErrorCode::kConfigInvalid, "--skip must be >= 1");
  require(opts.chunk_size >= 1, ErrorCode::kConfigInvalid, "--chunk-size must be >= 1");
  return load_dataset(opts.data_dir);
}

void require_files(const std::vector<fs::path>& paths, ErrorCode code, const std::string& what) {
  std::vector<std::string> missing;
  for (const auto& p : paths) {
    if (!fs::exists(p)) missing.push_back(p.string());
  }
  if (missing.empty()) return;
  std::string msg = std::to_string(missing.size()) + " " + what + " missing:";
  for (std::size_t i = 0; i < missing.size() && i < 20; ++i) msg += "\n  " + missing[i];
  if (missing.size() > 20) msg += "\n  ...";
  fail(code, msg);
}

}  // namespace

json CertifySummary::to_json() const {
  json j = {{"mode", mode},
            {"records", records},
            {"resumed", resumed},
            {"abstain_rate", abstain_rate()},
            {"mean_wall_time", mean_wall()},
            {"total_wall_time", total_wall},
            {"encoder_calls", encoder_calls},
            {"encoder_calls_counted", encoder_calls_counted}};
  if (mode == "irs") j["fast_path_fraction"] = fast_path_fraction();
  return j;
}

fs::path resolve_cache_dir(const RunOptions& opts) {
  if (!opts.cache_dir.empty()) return opts.cache_dir;
  if (const char* env = std::getenv("OVC_CACHE_DIR"); env != nullptr && *env != '\0') {
    return env;
  }
  return "ovc_cache";
}

fs::path embedding_path(const fs::path& cache_dir, std::uint64_t input_id, double sigma) {
  return cache_dir / "emb" / cache_name(input_id, sigma, ".ovce");
}

fs::path mvn_path(const fs::path& cache_dir, std::uint64_t input_id, double sigma) {
  return cache_dir / "mvn" / cache_name(input_id, sigma, ".ovcm");
}

fs::path meta_path(const fs::path& cache_dir, std::uint64_t input_id, double sigma) {
  return cache_dir / "meta" / cache_name(input_id, sigma, ".jsonl");
}

fs::path records_path(const fs::path& out_dir, const std::string& mode) {
  return out_dir / ("records_" + mode + ".jsonl");
}

std::uint64_t input_seed(std::uint64_t run_seed, std::uint64_t input_id) {
  return rng::derive_seed(run_seed, input_id);
}

std::vector<std::size_t> selected_inputs(std::size_t n_inputs, std::size_t skip) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < n_inputs; i += std::max<std::size_t>(skip, 1)) out.push_back(i);
  return out;
}

std::string manifest_hash(const RunOptions& opts, const Dataset& ds) {
  rng::Fnv1a h;
  h.update_value(ds.content_hash());
  const auto& c = opts.cfg;
  for (double v : {c.sigma, c.alpha, c.alpha_zeta, c.gamma}) h.update_value(v);
  for (std::uint64_t v : {std::uint64_t{c.n0}, std::uint64_t{c.n}, std::uint64_t{c.n_p},
                          opts.seed, std::uint64_t{opts.skip},
                          std::uint64_t{opts.chunk_size}}) {
    h.update_value(v);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h.digest()));
  return buf;
}

void cmd_gen_synthetic(const SyntheticParams& params, const fs::path& dir) {
  gen_synthetic(params, dir);
}

std::size_t cmd_build_cache(const RunOptions& opts) {
  const Dataset ds = load_for(opts);
  const Encoder enc = ds.make_encoder();
  require(enc.is_live(), ErrorCode::kEncoderUnavailable,
          "dataset has no live encoder; embedding caches must come from an exporter");
  const fs::path cache_dir = resolve_cache_dir(opts);
  const auto inputs = selected_inputs(ds.n_inputs, opts.skip);
  std::atomic<std::size_t> written{0};
  std::size_t done = 0;
  run_ordered(
      inputs.size(), opts.workers,
      [&](std::size_t i) {
        const std::uint64_t id = inputs[i];
        const fs::path path = embedding_path(cache_dir, id, opts.cfg.sigma);
        const NoiseStream stream = stream_for(opts, id);
        if (fs::exists(path)) {
          try {
            const EmbeddingCache existing = load_embedding_cache(path);
            if (existing.fingerprint() == embedding_fingerprint(stream.master_seed, stream.sigma,
                                                                stream.chunk_size, opts.cfg.n0,
                                                                opts.cfg.n) &&
                existing.input_id == id && existing.dim() == enc.dim_out()) {
              return 0;
            }
          } catch (const Error&) {
            // rebuilt below
          }
        }
        write_embedding_cache(
            path, build_embedding_cache(enc, ds.input(id), id, opts.cfg.n0, opts.cfg.n, stream));
        ++written;
        return 1;
      },
      [&](std::size_t, int) { progress(opts, "build-cache", ++done, inputs.size()); });
  return written;
}

std::size_t cmd_fit_mvn(const RunOptions& opts) {
  const Dataset ds = load_for(opts);
  const fs::path cache_dir = resolve_cache_dir(opts);
  const auto inputs = selected_inputs(ds.n_inputs, opts.skip);
  std::vector<fs::path> needed;
  for (auto id : inputs) needed.push_back(embedding_path(cache_dir, id, opts.cfg.sigma));
  require_files(needed, ErrorCode::kCacheMiss, "embedding caches");
  std::size_t done = 0;
  run_ordered(
      inputs.size(), opts.workers,
      [&](std::size_t i) {
        const std::uint64_t id = inputs[i];
        const EmbeddingCache cache = load_embedding_cache(needed[i]);
        require(cache.input_id == id && cache.sigma == opts.cfg.sigma,
                ErrorCode::kFingerprintMismatch,
                needed[i].string() + " holds a different (input, sigma)");
        MvnParams mvn = fit_mvn(cache.rows);
        mvn.input_id = id;
        mvn.sigma = cache.sigma;
        write_mvn(mvn_path(cache_dir, id, opts.cfg.sigma), mvn);
        return 1;
      },
      [&](std::size_t, int) { progress(opts, "fit-mvn", ++done, inputs.size()); });
  return inputs.size();
}

CertifySummary cmd_certify(const std::string& mode, const RunOptions& opts) {
  require(mode == "standard" || mode == "irs" || mode == "ovc" || mode == "mvn",
          ErrorCode::kConfigInvalid, "--mode must be standard, irs, ovc or mvn");
  const Dataset ds = load_for(opts);
  Encoder enc = ds.make_encoder();
  enc.set_call_padding(opts.pad);
  const fs::path cache_dir = resolve_cache_dir(opts);
  const auto inputs = selected_inputs(ds.n_inputs, opts.skip);
  const auto prompts =
      prompt_set(ds, opts.prompts.empty() ? (mode == "standard" ? "all" : "novel") : opts.prompts);
  const std::set<std::string> known(ds.known.begin(), ds.known.end());
  const CertConfig& cfg = opts.cfg;

  if (mode == "standard" || mode == "irs") {
    require(enc.is_live(), ErrorCode::kEncoderUnavailable,
            "mode " + mode + " needs a live encoder; use ovc or mvn with cached data");
  }
  std::vector<fs::path> needed;
  for (auto id : inputs) {
    if (mode == "ovc") needed.push_back(embedding_path(cache_dir, id, cfg.sigma));
    if (mode == "mvn") needed.push_back(mvn_path(cache_dir, id, cfg.sigma));
    if (mode == "irs") needed.push_back(meta_path(cache_dir, id, cfg.sigma));
  }
  require_files(needed, ErrorCode::kCacheMiss,
                mode == "irs" ? "certification metadata files (run --mode standard first)"
                              : "cache files");

  const std::string mhash = manifest_hash(opts, ds);
  const fs::path out_path = records_path(opts.out_dir, mode);
  std::set<std::pair<std::uint64_t, std::string>> done_keys;
  CertifySummary summary;
  summary.mode = mode;
  for (const auto& r : read_records(out_path)) {
    if (r.manifest_hash == mhash) done_keys.emplace(r.cert.input_id, r.cert.prompt_id);
  }

  const std::uint64_t calls_before = enc.eval_count();
  std::size_t finished = 0;
  run_ordered(
      inputs.size(), opts.workers,
      [&](std::size_t i) {
        const std::uint64_t id = inputs[i];
        std::vector<CertificateRecord> out;
        std::vector<std::string> todo;
        for (const auto& p : prompts) {
          if (!done_keys.count({id, p})) todo.push_back(p);
        }
        if (todo.empty()) return out;
        auto emit = [&](Certificate cert) {
          out.push_back({std::move(cert), mode, cfg.sigma, ds.label(id), mhash});
        };
        if (mode == "standard") {
          const NoiseStream stream = stream_for(opts, id);
          const fs::path mpath = meta_path(cache_dir, id, cfg.sigma);
          CertMetaCache meta;
          meta.input_id = id;
          meta.sigma = cfg.sigma;
          meta.master_seed = stream.master_seed;
          meta.chunk_size = stream.chunk_size;
          meta.n0 = cfg.n0;
          if (fs::exists(mpath)) {
            CertMetaCache existing = load_cert_meta(mpath);
            if (existing.trace_fingerprint() == meta.trace_fingerprint()) meta = std::move(existing);
          }
          bool touched = false;
          for (const auto& p : todo) {
            const bool record = known.count(p) > 0;
            emit(certify_standard(enc, ds.prompts.at(p), ds.input(id), id, cfg, stream, {},
                                  record ? &meta : nullptr));
            touched |= record;
          }
          if (touched) store_cert_meta(mpath, meta);
        } else if (mode == "irs") {
          const CertMetaCache meta = load_cert_meta(meta_path(cache_dir, id, cfg.sigma));
          for (const auto& p : todo) {
            emit(certify_modified_irs(enc, ds.prompts.at(p), ds.input(id), id, cfg, meta));
          }
        } else if (mode == "ovc") {
          // Load time counts toward the certificate: it is the dominant cost.
          const auto t0 = std::chrono::steady_clock::now();
          const EmbeddingCache cache = load_embedding_cache(embedding_path(cache_dir, id, cfg.sigma));
          const double load = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          for (const auto& p : todo) {
            Certificate c = certify_ovc(ds.prompts.at(p), id, cfg, cache);
            c.wall_time += load / static_cast<double>(todo.size());
            emit(std::move(c));
          }
        } else {
          const auto t0 = std::chrono::steady_clock::now();
          const MvnParams mvn = load_mvn(mvn_path(cache_dir, id, cfg.sigma));
          const double load = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          for (const auto& p : todo) {
            Certificate c = certify_mvn_ovc(ds.prompts.at(p), id, cfg, mvn,
                                            mvn_sample_seed(opts, id, p));
            c.wall_time += load / static_cast<double>(todo.size());
            emit(std::move(c));
          }
        }
        return out;
      },
      [&](std::size_t, std::vector<CertificateRecord> recs) {
        summary.resumed += prompts.size() - recs.size();
        for (const auto& r : recs) {
          ++summary.records;
          summary.total_wall += r.cert.wall_time;
          summary.encoder_calls += r.cert.encoder_calls;
          summary.abstained += r.cert.abstained();
          summary.fast_path += r.cert.method == Method::kModifiedIrsFast;
        }
        append_records(out_path, recs);
        progress(opts, "certify " + mode, ++finished, inputs.size());
      });
  summary.encoder_calls_counted = enc.eval_count() - calls_before;
  write_atomically(opts.out_dir / ("summary_" + mode + ".json"), summary.to_json().dump(2) + "\n");
  return summary;
}

json cmd_report(const std::vector<fs::path>& record_files) {
  require(!record_files.empty(), ErrorCode::kConfigInvalid, "report needs record files");
  std::vector<CertificateRecord> all;
  for (const auto& f : record_files) {
    require(fs::exists(f), ErrorCode::kCacheMiss, "record file " + f.string() + " not found");
    auto recs = read_records(f);
    all.insert(all.end(), std::make_move_iterator(recs.begin()),
               std::make_move_iterator(recs.end()));
  }
  require(!all.empty(), ErrorCode::kInvalidArgument, "record files contain no records");
  return build_report(all);
}

}  // namespace ovc::app
