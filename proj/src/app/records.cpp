#include "ovc/app/records.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "ovc/error.hpp"

namespace ovc::app {
namespace fs = std::filesystem;
using nlohmann::json;

std::string to_json_line(const CertificateRecord& rec) {
  const Certificate& c = rec.cert;
  json j = {{"input_id", c.input_id},
            {"prompt_id", c.prompt_id},
            {"mode", rec.mode},
            {"sigma", rec.sigma},
            {"predicted_class", c.predicted_class ? json(*c.predicted_class) : json("ABSTAIN")},
            {"radius", c.radius ? json(*c.radius) : json(nullptr)},
            {"p_a_lower", c.p_a_lower},
            {"confidence", c.confidence},
            {"method", std::string(to_string(c.method))},
            {"heuristic", c.heuristic},
            {"samples_used", c.samples_used},
            {"encoder_calls", c.encoder_calls},
            {"wall_time", c.wall_time},
            {"label", rec.label ? json(*rec.label) : json(nullptr)},
            {"manifest_hash", rec.manifest_hash}};
  if (c.irs) {
    j["irs"] = {{"sim_prompt_id", c.irs->sim_prompt_id},
                {"disagreement_count", c.irs->disagreement_count},
                {"n_p", c.irs->n_p},
                {"zeta_x", c.irs->zeta_x}};
  }
  return j.dump();
}

CertificateRecord parse_record(const std::string& line) {
  CertificateRecord rec;
  try {
    const json j = json::parse(line);
    Certificate& c = rec.cert;
    c.input_id = j.at("input_id").get<std::uint64_t>();
    c.prompt_id = j.at("prompt_id").get<std::string>();
    rec.mode = j.at("mode").get<std::string>();
    rec.sigma = j.at("sigma").get<double>();
    const json& cls = j.at("predicted_class");
    if (!cls.is_string()) c.predicted_class = cls.get<std::uint32_t>();
    if (!j.at("radius").is_null()) c.radius = j.at("radius").get<double>();
    require(c.predicted_class.has_value() == c.radius.has_value(), ErrorCode::kCorruptRecord,
            "class and radius must both be present or both absent");
    c.p_a_lower = j.at("p_a_lower").get<double>();
    c.confidence = j.at("confidence").get<double>();
    c.method = method_from_string(j.at("method").get<std::string>());
    c.heuristic = j.at("heuristic").get<bool>();
    c.samples_used = j.at("samples_used").get<std::uint64_t>();
    c.encoder_calls = j.at("encoder_calls").get<std::uint64_t>();
    c.wall_time = j.at("wall_time").get<double>();
    if (!j.at("label").is_null()) rec.label = j.at("label").get<std::int32_t>();
    rec.manifest_hash = j.at("manifest_hash").get<std::string>();
    if (j.contains("irs")) {
      const json& m = j.at("irs");
      c.irs = IrsMatch{m.at("sim_prompt_id").get<std::string>(),
                       m.at("disagreement_count").get<std::int64_t>(),
                       m.at("n_p").get<std::size_t>(), m.at("zeta_x").get<double>()};
    }
  } catch (const json::exception& ex) {
    fail(ErrorCode::kCorruptRecord, std::string("malformed certificate record: ") + ex.what());
  }
  return rec;
}

std::vector<CertificateRecord> read_records(const fs::path& path) {
  std::vector<CertificateRecord> out;
  std::ifstream in(path);
  if (!in) return out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const Error& e) {
      fail(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void append_records(const fs::path& path, const std::vector<CertificateRecord>& records) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) fail(ErrorCode::kIo, "cannot append to " + path.string());
  for (const auto& r : records) out << to_json_line(r) << '\n';
  out.flush();
  if (!out) fail(ErrorCode::kIo, "write failed for " + path.string());
}

}  // namespace ovc::app
