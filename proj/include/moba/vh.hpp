#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace moba {

struct Rect {
  int left = 0;
  int top = 0;
  int right = 0;
  int bottom = 0;

  int width() const { return right - left; }
  int height() const { return bottom - top; }
  std::int64_t area() const { return std::int64_t(width()) * std::int64_t(height()); }
  double center_x() const { return (left + right) / 2.0; }
  double center_y() const { return (top + bottom) / 2.0; }
  bool operator==(const Rect&) const = default;
};

std::int64_t intersection_area(const Rect& a, const Rect& b);
double iou(const Rect& a, const Rect& b);

/// Raw UIAutomator-style view-hierarchy node.
struct RawNode {
  Rect bounds;
  bool clickable = false;
  bool scrollable = false;
  bool editable = false;
  bool focused = false;
  std::string text;
  std::string content_desc;
  std::string class_name;
  std::string package;
  std::vector<RawNode> children;
};

enum class VhErrc { XmlSyntax, MalformedBounds };

class VhParseError : public std::runtime_error {
 public:
  VhParseError(VhErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  VhErrc code() const noexcept { return code_; }

 private:
  VhErrc code_;
};

/// Parses a `bounds="[l,t][r,b]"` attribute value.
Rect parse_bounds(std::string_view s);

RawNode parse_vh(std::string_view xml);

struct ScreenSize {
  int width = 1080;
  int height = 2400;
};

struct DistillConfig {
  double min_area_fraction = 0.0005;
  double max_overlap_iou = 0.5;
  double text_containment_fraction = 0.7;
  int row_tolerance_px = 16;
  /// For dumps that mark everything clickable=false: every leaf counts as interactive.
  bool treat_all_as_interactive = false;

  void validate() const;
};

DistillConfig distill_config_from_json(const nlohmann::json& j);

struct UiElement {
  int index = -1;  // -1 for plain text
  Rect bounds;
  bool interactive = false;
  std::string merged_text;
  // retained attribute subset
  bool clickable = false;
  bool scrollable = false;
  bool editable = false;
  bool focused = false;
  std::string class_name;

  bool operator==(const UiElement&) const = default;
};

/// Interactive elements first (index order), then plain-text elements.
std::vector<UiElement> distill(const RawNode& root, ScreenSize screen, const DistillConfig& config = {});

/// Per-pass bookkeeping used by the conservation property tests.
struct DistillTrace {
  std::size_t interactive_input = 0;
  std::size_t dropped_small_interactive = 0;
  std::size_t rejected_overlap = 0;
  std::size_t accepted = 0;
  std::size_t merged_text_nodes = 0;
  std::size_t surviving_text_nodes = 0;
};

std::vector<UiElement> distill(const RawNode& root, ScreenSize screen, const DistillConfig& config,
                               DistillTrace* trace);

struct OverlayInstruction {
  Rect bounds;
  std::string label;
  bool operator==(const OverlayInstruction&) const = default;
};

std::vector<OverlayInstruction> annotate(const std::vector<UiElement>& elements);

nlohmann::ordered_json to_json(const UiElement& e);
nlohmann::ordered_json to_json(const std::vector<UiElement>& elements);
nlohmann::ordered_json to_json(const std::vector<OverlayInstruction>& overlay);

/// A distilled screen as consumed by validation and the decision backend.
struct ScreenObservation {
  std::string screen_key;   // stable hash of (app, screen, scroll offset, popup)
  std::string screen_name;  // human-readable "app:screen"
  std::vector<UiElement> elements;
  bool focused_input = false;

  std::size_t interactive_count() const;
  const UiElement* find_index(int index) const;
  /// Compact text rendering sent to the backend as the observation.
  std::string describe() const;
};

ScreenObservation make_observation(std::string_view xml, std::string screen_key,
                                   std::string screen_name, ScreenSize size = {},
                                   const DistillConfig& config = {});

}  // namespace moba
