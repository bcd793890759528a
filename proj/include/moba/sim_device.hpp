#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "moba/action.hpp"
#include "moba/event_log.hpp"
#include "moba/vh.hpp"

namespace moba::sim {

inline constexpr int kDeviceWidth = 1080;
inline constexpr int kDeviceHeight = 2400;
inline constexpr const char* kLauncherApp = "launcher";
inline constexpr int kAppSpecSchemaVersion = 1;

enum class Trigger { Click, LongPress, DoubleClick, BoxInput, Type };

/// Equality or inequality test over an app variable.
struct Guard {
  std::string var;
  bool equals = true;
  std::string value;
};

struct Effect {
  enum class Kind { GotoScreen, SetVar, PushEvent, OpenApp, CloseApp } kind = Kind::GotoScreen;
  std::string target;  // screen or app id
  std::string name;    // var or event name
  std::string value;   // var value or event payload
};

struct TransitionRule {
  Trigger on = Trigger::Click;
  std::vector<Guard> guards;
  std::vector<Effect> effects;
};

struct ElementSpec {
  std::string key;
  Rect bounds;
  bool clickable = false;
  bool scrollable = false;
  bool editable = false;
  bool focused = false;
  std::string text;
  std::string content_desc;
  std::string class_name = "android.widget.TextView";
  std::string bind_var;          // editable: var receiving input
  bool char_input_only = false;  // editable: rejects bulk Box_Input text
  std::vector<TransitionRule> transitions;
};

/// A vertically scrolling list rendered inside a scrollable container element.
struct ScrollWindow {
  std::string container;  // key of the scrollable element
  int row_height = 0;
  int visible_rows = 0;
  int top = 0;
  int left = 0;
  int right = kDeviceWidth;
  std::vector<ElementSpec> rows;  // bounds are computed at render time

  int total_rows() const { return static_cast<int>(rows.size()); }
  int max_offset() const { return std::max(0, total_rows() - visible_rows); }
};

struct PopupSpec {
  std::string popup_id;
  double probability = 0.0;
  std::string text;
  ElementSpec dismiss_element;
};

struct ScreenSpec {
  std::string id;
  std::vector<ElementSpec> elements;
  std::optional<ScrollWindow> scroll_window;
  std::vector<PopupSpec> popups;
};

struct AppSpec {
  std::string app_id;
  std::string description;
  std::string initial_screen;
  std::map<std::string, std::string> vars;  // declared defaults
  std::map<std::string, ScreenSpec> screens;
};

class SpecValidationError : public std::runtime_error {
 public:
  SpecValidationError(std::string path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

AppSpec parse_app_spec(const nlohmann::json& j);
AppSpec load_app_spec(const std::filesystem::path& file);

enum class DeviceErrc { NonScrollableTarget, UnknownApp, NoFocusedInput, IndexOutOfRange, UnknownScreen };

std::string_view to_string(DeviceErrc e);

class DeviceError : public std::runtime_error {
 public:
  DeviceError(DeviceErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  DeviceErrc code() const noexcept { return code_; }

 private:
  DeviceErrc code_;
};

struct Location {
  std::string app;
  std::string screen;
  bool operator==(const Location&) const = default;
};

struct EventRecord {
  int step = 0;
  std::string action;
  nlohmann::ordered_json events = nlohmann::ordered_json::array();
  std::string screen_before;
  std::string screen_after;
  std::string key_before;
  std::string key_after;

  nlohmann::ordered_json to_json() const;
};

struct DeviceState {
  Location current{kLauncherApp, "home"};
  std::vector<Location> back_stack;
  std::map<std::string, std::map<std::string, std::string>> vars;  // app -> name -> value
  std::map<std::string, std::string> app_screen;                    // last screen per app
  std::map<std::string, int> scroll_offset;                         // "app:screen" -> offset
  std::optional<std::string> focused_element;
  std::optional<std::string> active_popup;
  std::vector<EventRecord> event_log;
  std::uint64_t rng_seed = 0;
  int step = 0;
};

struct RawObservation {
  std::string vh_xml;
  std::string screen_key;
  std::string screen_name;
};

struct ActionOutcome {
  nlohmann::ordered_json events = nlohmann::ordered_json::array();
  bool screen_changed = false;
  std::optional<DeviceErrc> error;
  std::string error_message;
};

/// Maps an Open_App description onto an installed package name.
using AppResolver = std::function<std::optional<std::string>(const std::string& description)>;

class SimDevice {
 public:
  SimDevice(std::vector<AppSpec> apps, std::uint64_t seed, DistillConfig distill = {});
  static SimDevice load(const std::vector<std::filesystem::path>& spec_files, std::uint64_t seed);

  RawObservation observe() const;
  ScreenObservation observe_distilled() const;

  /// Applies one action; always appends exactly one event record and advances
  /// the step counter by one. Action-level failures are reported in the outcome.
  ActionOutcome apply(const Action& action, const AppResolver& resolver = {});

  // Preparation directives: mutate state without logging a step.
  void prepare_set_var(const std::string& app, const std::string& name, const std::string& value);
  void prepare_goto(const std::string& app, const std::string& screen);

  void attach_log(EventLog* log) { sink_ = log; }

  const DeviceState& state() const { return state_; }
  int step() const { return state_.step; }
  const std::vector<EventRecord>& event_log() const { return state_.event_log; }
  std::vector<std::string> installed_apps() const;
  const AppSpec& app(const std::string& app_id) const;
  bool has_app(const std::string& app_id) const { return apps_.count(app_id) != 0; }
  std::string var(const std::string& app, const std::string& name) const;
  int scroll_offset() const;
  std::string screen_name() const;
  std::string screen_key() const;

  nlohmann::ordered_json serialize_state() const;

 private:
  struct Rendered {
    ElementSpec spec;  // bounds resolved
    bool is_row = false;
    bool is_dismiss = false;
  };

  const ScreenSpec& screen_spec() const;
  std::vector<Rendered> render() const;
  std::string render_xml(const std::vector<Rendered>& elems) const;
  std::optional<Rendered> resolve_index(int index) const;
  std::optional<Rendered> resolve_point(double x, double y) const;

  void tap(const Rendered& el, Trigger trigger, ActionOutcome& out);
  void fire(const ElementSpec& el, Trigger trigger, ActionOutcome& out, bool report_ineffective);
  void run_effects(const std::vector<Effect>& effects, ActionOutcome& out);
  void go_to(const Location& loc, bool push, ActionOutcome& out);
  void open_app(const std::string& app, ActionOutcome& out);
  void close_app(const std::string& app, ActionOutcome& out);
  void set_var(const std::string& app, const std::string& name, const std::string& value, ActionOutcome& out);
  void scroll_by(Direction dir, const DistanceSpec& dist, ActionOutcome& out);
  void roll_popups(ActionOutcome& out);
  void fail(DeviceErrc code, const std::string& msg, ActionOutcome& out);
  std::string offset_key() const;

  std::map<std::string, AppSpec> apps_;
  DeviceState state_;
  DistillConfig distill_;
  EventLog* sink_ = nullptr;
};

/// Scroll distance in rows for a window of `visible_rows`.
int distance_rows(const DistanceSpec& dist, int visible_rows);

}  // namespace moba::sim
