#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace moba {

/// Append-only line-delimited JSON stream shared by the engine and the device.
/// Engine records: {step, node_id, phase, payload}; device records: {step, phase:"env", ...}.
class EventLog {
 public:
  void append(const nlohmann::ordered_json& record) { lines_.push_back(record.dump()); }
  const std::vector<std::string>& lines() const { return lines_; }
  std::size_t size() const { return lines_.size(); }
  std::string text() const;
  void write(const std::filesystem::path& file) const;

  static std::vector<nlohmann::json> read(const std::filesystem::path& file);
  static std::vector<nlohmann::json> parse(const std::string& text);

 private:
  std::vector<std::string> lines_;
};

}  // namespace moba
