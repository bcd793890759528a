#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace moba {

struct ScreenObservation;

enum class Direction { Up, Down, Left, Right };

enum class Magnitude { Short, Medium, Long };

/// Scroll/swipe distance: a named magnitude or a positive row count.
using DistanceSpec = std::variant<Magnitude, int>;

namespace actions {

struct Click {
  int element_index = 0;
  bool operator==(const Click&) const = default;
};

/// Coordinates are fractions of the screen width/height in [0, 1].
struct ClickByCoordinate {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const ClickByCoordinate&) const = default;
};

struct DoubleClick {
  int element_index = 0;
  bool operator==(const DoubleClick&) const = default;
};

struct LongPress {
  int element_index = 0;
  bool operator==(const LongPress&) const = default;
};

struct Scroll {
  int element_index = 0;
  Direction direction = Direction::Down;
  DistanceSpec distance = Magnitude::Medium;
  bool operator==(const Scroll&) const = default;
};

struct Swipe {
  Direction direction = Direction::Down;
  DistanceSpec distance = Magnitude::Medium;
  bool operator==(const Swipe&) const = default;
};

struct Type {
  std::string text;
  bool operator==(const Type&) const = default;
};

struct Back {
  bool operator==(const Back&) const = default;
};

struct BoxInput {
  int element_index = 0;
  std::string text;
  bool operator==(const BoxInput&) const = default;
};

struct OpenApp {
  std::optional<std::string> description;
  bool operator==(const OpenApp&) const = default;
};

struct CloseApp {
  std::optional<std::string> package_name;
  bool operator==(const CloseApp&) const = default;
};

struct Failed {
  bool operator==(const Failed&) const = default;
};

struct Finish {
  bool operator==(const Finish&) const = default;
};

}  // namespace actions

using Action = std::variant<actions::Click, actions::ClickByCoordinate, actions::DoubleClick,
                            actions::LongPress, actions::Scroll, actions::Swipe, actions::Type,
                            actions::Back, actions::BoxInput, actions::OpenApp, actions::CloseApp,
                            actions::Failed, actions::Finish>;

enum class ActionCategory { Single, Combination, System };

ActionCategory category_of(const Action& action);

/// Wire name as used in the function-call syntax, e.g. "Box_Input".
std::string_view action_name(const Action& action);

/// The thirteen accepted call names, in table order.
const std::vector<std::string_view>& action_names();

/// Signatures handed to the decision backend as the executable action set.
const std::vector<std::string>& action_catalog();

/// Element index referenced by the action, if any.
std::optional<int> target_index(const Action& action);

std::string_view to_string(Direction d);
std::string_view to_string(Magnitude m);
std::optional<Direction> parse_direction(std::string_view s);
std::optional<Magnitude> parse_magnitude(std::string_view s);

enum class ActionParseErrc { Syntax, UnknownAction, Arity, Type };

class ActionParseError : public std::runtime_error {
 public:
  ActionParseError(ActionParseErrc code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ActionParseErrc code() const noexcept { return code_; }

 private:
  ActionParseErrc code_;
};

/// Parses a single call expression such as `Box_Input(3, "G104")`.
/// Throws ActionParseError.
Action parse_action_call(std::string_view text);

/// Canonical form: strings double-quoted with `\"` and `\\` escapes,
/// integers bare, zero-argument calls as `Name()`.
std::string format_action(const Action& action);

enum class ValidationErrc {
  Ok,
  IndexOutOfRange,
  TextTargetNotInteractive,
  NoFocusedInput,
  CoordinateOutOfBounds,
};

std::string_view to_string(ValidationErrc e);

struct ValidationResult {
  ValidationErrc error = ValidationErrc::Ok;
  std::string message;

  bool ok() const { return error == ValidationErrc::Ok; }
};

ValidationResult validate_action(const Action& action, const ScreenObservation& screen);

}  // namespace moba
