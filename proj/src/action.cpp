#include "moba/action.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>
#include <type_traits>

#include "moba/vh.hpp"

namespace moba {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Argument tokens of a call expression.
struct Arg {
  enum class Kind { Int, Real, String } kind = Kind::Int;
  long long int_value = 0;
  double real_value = 0.0;
  std::string text;  // decoded string, or the raw numeric token
};

class CallLexer {
 public:
  explicit CallLexer(std::string_view s) : s_(s) {}

  void skip_ws() {
    while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' || s_[pos_] == '\r'))
      ++pos_;
  }

  bool at_end() const { return pos_ >= s_.size(); }
  char peek() const { return at_end() ? '\0' : s_[pos_]; }

  bool consume(char c) {
    skip_ws();
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  std::string name() {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_'))
      ++pos_;
    return std::string(s_.substr(start, pos_ - start));
  }

  Arg argument() {
    skip_ws();
    if (peek() == '"') return string_literal();
    std::size_t start = pos_;
    while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != ')' && s_[pos_] != ' ' && s_[pos_] != '\t')
      ++pos_;
    std::string_view tok = s_.substr(start, pos_ - start);
    if (tok.empty()) throw ActionParseError(ActionParseErrc::Syntax, "missing argument");
    Arg arg;
    arg.kind = Arg::Kind::Int;
    arg.text = std::string(tok);
    long long iv = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), iv);
    if (ec == std::errc() && p == tok.data() + tok.size()) {
      arg.int_value = iv;
      return arg;
    }
    double dv = 0.0;
    auto [pd, ecd] = std::from_chars(tok.data(), tok.data() + tok.size(), dv);
    if (ecd == std::errc() && pd == tok.data() + tok.size() && std::isfinite(dv)) {
      arg.kind = Arg::Kind::Real;
      arg.real_value = dv;
      return arg;
    }
    throw ActionParseError(ActionParseErrc::Type, "unrecognised argument '" + std::string(tok) + "'");
  }

 private:
  Arg string_literal() {
    ++pos_;  // opening quote
    Arg arg;
    arg.kind = Arg::Kind::String;
    while (true) {
      if (at_end()) throw ActionParseError(ActionParseErrc::Type, "unterminated string literal");
      char c = s_[pos_++];
      if (c == '"') break;
      if (c == '\\') {
        if (at_end()) throw ActionParseError(ActionParseErrc::Type, "unterminated escape");
        char e = s_[pos_++];
        if (e != '"' && e != '\\')
          throw ActionParseError(ActionParseErrc::Type, std::string("invalid escape \\") + e);
        arg.text.push_back(e);
        continue;
      }
      arg.text.push_back(c);
    }
    return arg;
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

void expect_arity(std::string_view name, const std::vector<Arg>& args, std::size_t lo, std::size_t hi) {
  if (args.size() < lo || args.size() > hi) {
    std::string want = lo == hi ? std::to_string(lo) : std::to_string(lo) + ".." + std::to_string(hi);
    throw ActionParseError(ActionParseErrc::Arity, std::string(name) + " expects " + want +
                                                       " argument(s), got " + std::to_string(args.size()));
  }
}

int as_index(const Arg& a) {
  if (a.kind != Arg::Kind::Int) throw ActionParseError(ActionParseErrc::Type, "element index must be an integer");
  if (a.int_value < 0 || a.int_value > std::numeric_limits<int>::max())
    throw ActionParseError(ActionParseErrc::Type, "element index out of domain: " + a.text);
  return static_cast<int>(a.int_value);
}

double as_real(const Arg& a) {
  if (a.kind == Arg::Kind::Int) return static_cast<double>(a.int_value);
  if (a.kind == Arg::Kind::Real) return a.real_value;
  throw ActionParseError(ActionParseErrc::Type, "expected a number");
}

const std::string& as_string(const Arg& a) {
  if (a.kind != Arg::Kind::String) throw ActionParseError(ActionParseErrc::Type, "expected a string literal");
  return a.text;
}

Direction as_direction(const Arg& a) {
  auto d = parse_direction(as_string(a));
  if (!d) throw ActionParseError(ActionParseErrc::Type, "unknown direction '" + a.text + "'");
  return *d;
}

DistanceSpec as_distance(const Arg& a) {
  if (a.kind == Arg::Kind::String) {
    auto m = parse_magnitude(a.text);
    if (!m) throw ActionParseError(ActionParseErrc::Type, "unknown distance '" + a.text + "'");
    return *m;
  }
  if (a.kind == Arg::Kind::Int && a.int_value > 0 && a.int_value <= std::numeric_limits<int>::max())
    return static_cast<int>(a.int_value);
  throw ActionParseError(ActionParseErrc::Type, "distance must be a magnitude or a positive integer");
}

std::string quote(std::string_view s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string format_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

std::string format_distance(const DistanceSpec& d) {
  if (auto m = std::get_if<Magnitude>(&d)) return quote(to_string(*m));
  return std::to_string(std::get<int>(d));
}

}  // namespace

std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::Up: return "up";
    case Direction::Down: return "down";
    case Direction::Left: return "left";
    case Direction::Right: return "right";
  }
  return "down";
}

std::string_view to_string(Magnitude m) {
  switch (m) {
    case Magnitude::Short: return "short";
    case Magnitude::Medium: return "medium";
    case Magnitude::Long: return "long";
  }
  return "medium";
}

std::optional<Direction> parse_direction(std::string_view s) {
  if (s == "up") return Direction::Up;
  if (s == "down") return Direction::Down;
  if (s == "left") return Direction::Left;
  if (s == "right") return Direction::Right;
  return std::nullopt;
}

std::optional<Magnitude> parse_magnitude(std::string_view s) {
  if (s == "short") return Magnitude::Short;
  if (s == "medium") return Magnitude::Medium;
  if (s == "long") return Magnitude::Long;
  return std::nullopt;
}

const std::vector<std::string_view>& action_names() {
  static const std::vector<std::string_view> names = {
      "Click", "Click_by_Coordinate", "Double_Click", "Long_Press", "Scroll",   "Swipe",  "Type",
      "Back",  "Box_Input",           "Open_App",     "Close_App",  "Failed", "Finish"};
  return names;
}

const std::vector<std::string>& action_catalog() {
  static const std::vector<std::string> catalog = {
      "Click(element_index: int)",
      "Click_by_Coordinate(x: double, y: double)",
      "Double_Click(element_index: int)",
      "Long_Press(element_index: int)",
      "Scroll(element_index: int, direction: str, distance: str or int)",
      "Swipe(direction: str, distance: str)",
      "Type(text: str)",
      "Back()",
      "Box_Input(element_index: int, text: str)",
      "Open_App(description: Optional[str])",
      "Close_App(package_name: Optional[str])",
      "Failed()",
      "Finish()"};
  return catalog;
}

std::string_view action_name(const Action& action) {
  return action_names()[action.index()];
}

ActionCategory category_of(const Action& action) {
  return std::visit(overloaded{
                        [](const actions::BoxInput&) { return ActionCategory::Combination; },
                        [](const actions::OpenApp&) { return ActionCategory::System; },
                        [](const actions::CloseApp&) { return ActionCategory::System; },
                        [](const actions::Failed&) { return ActionCategory::System; },
                        [](const actions::Finish&) { return ActionCategory::System; },
                        [](const auto&) { return ActionCategory::Single; },
                    },
                    action);
}

std::optional<int> target_index(const Action& action) {
  return std::visit(
      [](const auto& a) -> std::optional<int> {
        if constexpr (requires { a.element_index; })
          return a.element_index;
        else
          return std::nullopt;
      },
      action);
}

Action parse_action_call(std::string_view text) {
  CallLexer lex(text);
  std::string name = lex.name();
  if (name.empty()) throw ActionParseError(ActionParseErrc::Syntax, "expected an action name");
  if (!lex.consume('(')) throw ActionParseError(ActionParseErrc::Syntax, "expected '(' after " + name);

  std::vector<Arg> args;
  if (!lex.consume(')')) {
    while (true) {
      args.push_back(lex.argument());
      if (lex.consume(')')) break;
      if (!lex.consume(',')) throw ActionParseError(ActionParseErrc::Syntax, "expected ',' or ')'");
    }
  }
  lex.skip_ws();
  if (!lex.at_end()) throw ActionParseError(ActionParseErrc::Syntax, "trailing characters after call");

  using namespace actions;
  if (name == "Click") {
    expect_arity(name, args, 1, 1);
    return Click{as_index(args[0])};
  }
  if (name == "Click_by_Coordinate") {
    expect_arity(name, args, 2, 2);
    return ClickByCoordinate{as_real(args[0]), as_real(args[1])};
  }
  if (name == "Double_Click") {
    expect_arity(name, args, 1, 1);
    return DoubleClick{as_index(args[0])};
  }
  if (name == "Long_Press") {
    expect_arity(name, args, 1, 1);
    return LongPress{as_index(args[0])};
  }
  if (name == "Scroll") {
    expect_arity(name, args, 3, 3);
    return actions::Scroll{as_index(args[0]), as_direction(args[1]), as_distance(args[2])};
  }
  if (name == "Swipe") {
    expect_arity(name, args, 2, 2);
    return Swipe{as_direction(args[0]), as_distance(args[1])};
  }
  if (name == "Type") {
    expect_arity(name, args, 1, 1);
    return actions::Type{as_string(args[0])};
  }
  if (name == "Back") {
    expect_arity(name, args, 0, 0);
    return Back{};
  }
  if (name == "Box_Input") {
    expect_arity(name, args, 2, 2);
    return BoxInput{as_index(args[0]), as_string(args[1])};
  }
  if (name == "Open_App") {
    expect_arity(name, args, 0, 1);
    if (args.empty()) return OpenApp{};
    return OpenApp{as_string(args[0])};
  }
  if (name == "Close_App") {
    expect_arity(name, args, 0, 1);
    if (args.empty()) return CloseApp{};
    return CloseApp{as_string(args[0])};
  }
  if (name == "Failed") {
    expect_arity(name, args, 0, 0);
    return actions::Failed{};
  }
  if (name == "Finish") {
    expect_arity(name, args, 0, 0);
    return Finish{};
  }
  throw ActionParseError(ActionParseErrc::UnknownAction, "unknown action '" + name + "'");
}

std::string format_action(const Action& action) {
  using namespace actions;
  std::string args = std::visit(
      overloaded{
          [](const Click& a) { return std::to_string(a.element_index); },
          [](const ClickByCoordinate& a) { return format_real(a.x) + ", " + format_real(a.y); },
          [](const DoubleClick& a) { return std::to_string(a.element_index); },
          [](const LongPress& a) { return std::to_string(a.element_index); },
          [](const actions::Scroll& a) {
            return std::to_string(a.element_index) + ", " + quote(to_string(a.direction)) + ", " +
                   format_distance(a.distance);
          },
          [](const Swipe& a) { return quote(to_string(a.direction)) + ", " + format_distance(a.distance); },
          [](const actions::Type& a) { return quote(a.text); },
          [](const BoxInput& a) { return std::to_string(a.element_index) + ", " + quote(a.text); },
          [](const OpenApp& a) { return a.description ? quote(*a.description) : std::string(); },
          [](const CloseApp& a) { return a.package_name ? quote(*a.package_name) : std::string(); },
          [](const auto&) { return std::string(); },
      },
      action);
  return std::string(action_name(action)) + "(" + args + ")";
}

std::string_view to_string(ValidationErrc e) {
  switch (e) {
    case ValidationErrc::Ok: return "Ok";
    case ValidationErrc::IndexOutOfRange: return "IndexOutOfRange";
    case ValidationErrc::TextTargetNotInteractive: return "TextTargetNotInteractive";
    case ValidationErrc::NoFocusedInput: return "NoFocusedInput";
    case ValidationErrc::CoordinateOutOfBounds: return "CoordinateOutOfBounds";
  }
  return "Ok";
}

ValidationResult validate_action(const Action& action, const ScreenObservation& screen) {
  if (auto idx = target_index(action)) {
    if (*idx == -1)
      return {ValidationErrc::TextTargetNotInteractive, "index -1 refers to a plain text element"};
    if (*idx < 0 || static_cast<std::size_t>(*idx) >= screen.interactive_count())
      return {ValidationErrc::IndexOutOfRange,
              "element " + std::to_string(*idx) + " not among " + std::to_string(screen.interactive_count()) +
                  " interactive elements"};
    return {};
  }
  if (auto c = std::get_if<actions::ClickByCoordinate>(&action)) {
    auto in_unit = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in_unit(c->x) || !in_unit(c->y))
      return {ValidationErrc::CoordinateOutOfBounds, "coordinates must lie in [0, 1]"};
    return {};
  }
  if (std::holds_alternative<actions::Type>(action) && !screen.focused_input)
    return {ValidationErrc::NoFocusedInput, "no focused input box on screen"};
  return {};
}

}  // namespace moba
