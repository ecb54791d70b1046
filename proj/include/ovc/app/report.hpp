#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ovc/app/records.hpp"

namespace ovc::app {

struct CurvePoint {
  double radius = 0.0;
  double fraction = 0.0;
};

/// Certified accuracy as a step function of radius. Evaluated at 0 and at
/// every distinct certified radius: the fraction of records that certify a
/// radius >= r with the correct class (any class when the label is unknown).
std::vector<CurvePoint> certified_accuracy_curve(std::span<const CertificateRecord> records);

struct ScatterPoint {
  std::uint64_t input_id = 0;
  std::string prompt_id;
  double sigma = 0.0;
  double radius_a = 0.0;  // 0 when abstaining
  double radius_b = 0.0;
};

/// Pairs records of two modes on (input, prompt, sigma).
std::vector<ScatterPoint> paired_scatter(std::span<const CertificateRecord> a,
                                         std::span<const CertificateRecord> b);

struct SpeedupRow {
  std::size_t pairs = 0;
  double baseline_wall = 0.0;
  double method_wall = 0.0;
  double speedup = 0.0;  // baseline_wall / method_wall
  std::uint64_t baseline_encoder_calls = 0;
  std::uint64_t method_encoder_calls = 0;
};

SpeedupRow speedup(std::span<const CertificateRecord> baseline,
                   std::span<const CertificateRecord> method);

/// Curves per mode, scatter and speedup of every mode against "standard".
nlohmann::json build_report(const std::vector<CertificateRecord>& records);

}  // namespace ovc::app
