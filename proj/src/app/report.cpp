#include "ovc/app/report.hpp"

#include <algorithm>
#include <set>
#include <tuple>

#include "ovc/error.hpp"

namespace ovc::app {
using nlohmann::json;

namespace {

using Key = std::tuple<std::uint64_t, std::string, double>;

Key key_of(const CertificateRecord& r) { return {r.cert.input_id, r.cert.prompt_id, r.sigma}; }

double radius_or_zero(const CertificateRecord& r) { return r.cert.radius.value_or(0.0); }

bool counts_as_correct(const CertificateRecord& r) {
  if (r.cert.abstained()) return false;
  return !r.label || static_cast<std::int64_t>(*r.cert.predicted_class) == *r.label;
}

}  // namespace

std::vector<CurvePoint> certified_accuracy_curve(std::span<const CertificateRecord> records) {
  require(!records.empty(), ErrorCode::kInvalidArgument, "no records to summarise");
  std::vector<double> levels{0.0};
  for (const auto& r : records) {
    if (r.cert.radius) levels.push_back(*r.cert.radius);
  }
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  std::vector<CurvePoint> curve;
  for (double level : levels) {
    std::size_t hit = 0;
    for (const auto& r : records) {
      if (counts_as_correct(r) && *r.cert.radius >= level) ++hit;
    }
    curve.push_back({level, static_cast<double>(hit) / static_cast<double>(records.size())});
  }
  return curve;
}

std::vector<ScatterPoint> paired_scatter(std::span<const CertificateRecord> a,
                                         std::span<const CertificateRecord> b) {
  std::map<Key, const CertificateRecord*> index;
  for (const auto& r : a) index[key_of(r)] = &r;
  std::vector<ScatterPoint> out;
  for (const auto& r : b) {
    const auto it = index.find(key_of(r));
    if (it == index.end()) continue;
    out.push_back({r.cert.input_id, r.cert.prompt_id, r.sigma, radius_or_zero(*it->second),
                   radius_or_zero(r)});
  }
  return out;
}

SpeedupRow speedup(std::span<const CertificateRecord> baseline,
                   std::span<const CertificateRecord> method) {
  std::map<Key, const CertificateRecord*> index;
  for (const auto& r : baseline) index[key_of(r)] = &r;
  SpeedupRow row;
  for (const auto& r : method) {
    const auto it = index.find(key_of(r));
    if (it == index.end()) continue;
    ++row.pairs;
    row.baseline_wall += it->second->cert.wall_time;
    row.method_wall += r.cert.wall_time;
    row.baseline_encoder_calls += it->second->cert.encoder_calls;
    row.method_encoder_calls += r.cert.encoder_calls;
  }
  row.speedup = row.method_wall > 0.0 ? row.baseline_wall / row.method_wall : 0.0;
  return row;
}

json build_report(const std::vector<CertificateRecord>& records) {
  require(!records.empty(), ErrorCode::kInvalidArgument, "no records to report on");
  std::map<std::string, std::vector<CertificateRecord>> by_mode;
  for (const auto& r : records) by_mode[r.mode].push_back(r);

  json report = {{"curves", json::object()},
                 {"scatter", json::object()},
                 {"speedup", json::object()},
                 {"diagonal", json::object()}};
  for (const auto& [mode, recs] : by_mode) {
    json curve = json::array();
    for (const auto& p : certified_accuracy_curve(recs)) curve.push_back({p.radius, p.fraction});
    report["curves"][mode] = curve;
  }
  const auto base = by_mode.find("standard");
  if (base == by_mode.end()) return report;
  for (const auto& [mode, recs] : by_mode) {
    if (mode == "standard") continue;
    json points = json::array();
    std::size_t on = 0;
    std::size_t below = 0;
    std::size_t above = 0;
    for (const auto& p : paired_scatter(base->second, recs)) {
      points.push_back({{"input_id", p.input_id},
                        {"prompt_id", p.prompt_id},
                        {"sigma", p.sigma},
                        {"standard", p.radius_a},
                        {mode, p.radius_b}});
      if (p.radius_b == p.radius_a) {
        ++on;
      } else if (p.radius_b < p.radius_a) {
        ++below;
      } else {
        ++above;
      }
    }
    report["scatter"][mode] = points;
    report["diagonal"][mode] = {{"on", on}, {"below", below}, {"above", above}};
    const SpeedupRow s = speedup(base->second, recs);
    report["speedup"][mode] = {{"pairs", s.pairs},
                               {"standard_wall", s.baseline_wall},
                               {"method_wall", s.method_wall},
                               {"speedup", s.speedup},
                               {"standard_encoder_calls", s.baseline_encoder_calls},
                               {"method_encoder_calls", s.method_encoder_calls}};
    if (mode == "irs") {
      // Amortized: also charge the standard runs on known prompts that
      // produced the metadata for these inputs.
      std::set<std::pair<std::uint64_t, double>> inputs;
      std::set<std::string> novel;
      for (const auto& r : recs) {
        inputs.insert({r.cert.input_id, r.sigma});
        novel.insert(r.cert.prompt_id);
      }
      double known_wall = 0.0;
      for (const auto& r : base->second) {
        if (inputs.count({r.cert.input_id, r.sigma}) && !novel.count(r.cert.prompt_id)) {
          known_wall += r.cert.wall_time;
        }
      }
      const double amortized = s.method_wall + known_wall;
      report["speedup"][mode]["known_prompt_wall"] = known_wall;
      report["speedup"][mode]["amortized_speedup"] =
          amortized > 0.0 ? s.baseline_wall / amortized : 0.0;
    }
  }
  return report;
}

}  // namespace ovc::app
