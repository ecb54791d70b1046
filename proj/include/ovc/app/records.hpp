#pragma once

// One certificate per line of JSON; append-only output of `ovc certify`.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ovc/certify.hpp"

namespace ovc::app {

struct CertificateRecord {
  Certificate cert;
  std::string mode;  // standard | irs | ovc | mvn
  double sigma = 0.0;
  std::optional<std::int32_t> label;
  std::string manifest_hash;
};

std::string to_json_line(const CertificateRecord& rec);
CertificateRecord parse_record(const std::string& line);

/// All records in a file; an absent file yields an empty list.
std::vector<CertificateRecord> read_records(const std::filesystem::path& path);

void append_records(const std::filesystem::path& path,
                    const std::vector<CertificateRecord>& records);

}  // namespace ovc::app
