#include <random>

#include <gtest/gtest.h>

#include "moba/action.hpp"
#include "moba/vh.hpp"

using namespace moba;
using namespace moba::actions;

TEST(ActionParse, TableExamples) {
  EXPECT_EQ(parse_action_call("Click(5)"), Action(Click{5}));
  EXPECT_EQ(parse_action_call("Finish()"), Action(Finish{}));
  EXPECT_EQ(parse_action_call("Box_Input(3, \"G104\")"), Action(BoxInput{3, "G104"}));
}

TEST(ActionParse, UnknownName) {
  try {
    parse_action_call("Teleport(1)");
    FAIL() << "expected UnknownAction";
  } catch (const ActionParseError& e) {
    EXPECT_EQ(e.code(), ActionParseErrc::UnknownAction);
  }
}

TEST(ActionParse, NamesAreCaseSensitive) {
  EXPECT_THROW(parse_action_call("click(1)"), ActionParseError);
  EXPECT_THROW(parse_action_call("BoxInput(1, \"x\")"), ActionParseError);
}

TEST(ActionParse, ArityAndTypeErrors) {
  auto code_of = [](const char* text) {
    try {
      parse_action_call(text);
    } catch (const ActionParseError& e) {
      return e.code();
    }
    return ActionParseErrc::Syntax;
  };
  EXPECT_EQ(code_of("Click()"), ActionParseErrc::Arity);
  EXPECT_EQ(code_of("Click(1, 2)"), ActionParseErrc::Arity);
  EXPECT_EQ(code_of("Back(1)"), ActionParseErrc::Arity);
  EXPECT_EQ(code_of("Click(\"a\")"), ActionParseErrc::Type);
  EXPECT_EQ(code_of("Type(\"unterminated)"), ActionParseErrc::Type);
  EXPECT_EQ(code_of("Scroll(1, \"sideways\", \"long\")"), ActionParseErrc::Type);
}

TEST(ActionParse, WhitespaceAndEscapes) {
  EXPECT_EQ(parse_action_call("  Scroll( 2 ,\"up\" ,  3 ) "), Action(Scroll{2, Direction::Up, 3}));
  EXPECT_EQ(parse_action_call(R"(Type("say \"hi\" \\ bye"))"), Action(Type{"say \"hi\" \\ bye"}));
  EXPECT_EQ(parse_action_call("Open_App()"), Action(OpenApp{}));
  EXPECT_EQ(parse_action_call("Open_App(\"train tickets\")"), Action(OpenApp{"train tickets"}));
}

TEST(ActionFormat, Canonical) {
  EXPECT_EQ(format_action(Finish{}), "Finish()");
  EXPECT_EQ(format_action(BoxInput{3, "G104"}), "Box_Input(3, \"G104\")");
  EXPECT_EQ(format_action(Swipe{Direction::Down, Magnitude::Medium}), "Swipe(\"down\", \"medium\")");
  EXPECT_EQ(format_action(Type{"a\"b"}), "Type(\"a\\\"b\")");
}

TEST(ActionCategory, MatchesTable) {
  EXPECT_EQ(category_of(BoxInput{}), ActionCategory::Combination);
  for (const Action& a : {Action(OpenApp{}), Action(CloseApp{}), Action(Failed{}), Action(Finish{})})
    EXPECT_EQ(category_of(a), ActionCategory::System) << format_action(a);
  for (const Action& a : {Action(Click{}), Action(ClickByCoordinate{}), Action(DoubleClick{}), Action(LongPress{}),
                          Action(Scroll{}), Action(Swipe{}), Action(Type{}), Action(Back{})})
    EXPECT_EQ(category_of(a), ActionCategory::Single) << format_action(a);
}

TEST(ActionNames, ExactlyThirteen) {
  const auto& names = action_names();
  ASSERT_EQ(names.size(), 13u);
  for (auto n : names) {
    std::string call(n);
    call += "(";
    // every listed name is recognised (arity errors are fine, UnknownAction is not)
    try {
      parse_action_call(call + ")");
    } catch (const ActionParseError& e) {
      EXPECT_NE(e.code(), ActionParseErrc::UnknownAction) << n;
    }
  }
  EXPECT_EQ(action_catalog().size(), 13u);
}

namespace {

Action random_action(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 12);
  std::uniform_int_distribution<int> idx(0, 50);
  std::uniform_int_distribution<int> dir(0, 3);
  std::uniform_int_distribution<int> mag(0, 3);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  auto text = [&] {
    static const char alphabet[] = "abc XYZ019\"\\,()";
    std::uniform_int_distribution<int> len(0, 8);
    std::uniform_int_distribution<std::size_t> ch(0, sizeof(alphabet) - 2);
    std::string s;
    for (int i = len(rng); i > 0; --i) s += alphabet[ch(rng)];
    return s;
  };
  auto dist = [&]() -> DistanceSpec {
    int m = mag(rng);
    if (m == 3) return idx(rng) + 1;
    return static_cast<Magnitude>(m);
  };
  switch (kind(rng)) {
    case 0: return Click{idx(rng)};
    case 1: return ClickByCoordinate{std::round(frac(rng) * 1000) / 1000, std::round(frac(rng) * 1000) / 1000};
    case 2: return DoubleClick{idx(rng)};
    case 3: return LongPress{idx(rng)};
    case 4: return Scroll{idx(rng), static_cast<Direction>(dir(rng)), dist()};
    case 5: return Swipe{static_cast<Direction>(dir(rng)), dist()};
    case 6: return Type{text()};
    case 7: return Back{};
    case 8: return BoxInput{idx(rng), text()};
    case 9: return frac(rng) < 0.5 ? OpenApp{} : OpenApp{text()};
    case 10: return frac(rng) < 0.5 ? CloseApp{} : CloseApp{text()};
    case 11: return Failed{};
    default: return Finish{};
  }
}

}  // namespace

TEST(ActionProperty, RoundTrip) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const Action a = random_action(rng);
    const std::string s = format_action(a);
    EXPECT_EQ(parse_action_call(s), a) << s;
  }
}

namespace {

ScreenObservation screen_with(int interactive, int text, bool focused) {
  ScreenObservation obs;
  for (int i = 0; i < interactive; ++i) {
    UiElement e;
    e.index = i;
    e.interactive = true;
    e.bounds = {0, i * 100, 100, i * 100 + 90};
    obs.elements.push_back(e);
  }
  for (int i = 0; i < text; ++i) {
    UiElement e;
    e.bounds = {200, i * 100, 300, i * 100 + 90};
    obs.elements.push_back(e);
  }
  obs.focused_input = focused;
  return obs;
}

}  // namespace

TEST(ActionValidate, Examples) {
  const auto five = screen_with(5, 0, false);
  EXPECT_EQ(validate_action(Click{7}, five).error, ValidationErrc::IndexOutOfRange);
  EXPECT_EQ(validate_action(Type{"hi"}, five).error, ValidationErrc::NoFocusedInput);
  EXPECT_TRUE(validate_action(Back{}, five).ok());
  EXPECT_TRUE(validate_action(Back{}, ScreenObservation{}).ok());
}

TEST(ActionValidate, Unconditional) {
  const ScreenObservation empty;
  for (const Action& a : {Action(Back{}), Action(Failed{}), Action(Finish{}), Action(OpenApp{"x"}),
                          Action(CloseApp{}), Action(Swipe{}), Action(ClickByCoordinate{0.0, 1.0})})
    EXPECT_TRUE(validate_action(a, empty).ok()) << format_action(a);
  EXPECT_EQ(validate_action(ClickByCoordinate{1.2, 0.5}, empty).error, ValidationErrc::CoordinateOutOfBounds);
  EXPECT_EQ(validate_action(ClickByCoordinate{0.5, -0.1}, empty).error, ValidationErrc::CoordinateOutOfBounds);
}

TEST(ActionValidate, IndexedTargets) {
  const auto s = screen_with(3, 2, true);
  EXPECT_TRUE(validate_action(Click{2}, s).ok());
  EXPECT_TRUE(validate_action(Scroll{0, Direction::Up, 1}, s).ok());
  EXPECT_TRUE(validate_action(BoxInput{1, "x"}, s).ok());
  EXPECT_TRUE(validate_action(Type{"x"}, s).ok());
  EXPECT_EQ(validate_action(LongPress{3}, s).error, ValidationErrc::IndexOutOfRange);
  EXPECT_EQ(validate_action(DoubleClick{-1}, s).error, ValidationErrc::TextTargetNotInteractive);
}

TEST(ActionValidate, DoesNotMutate) {
  const auto s = screen_with(2, 1, false);
  const auto copy = s;
  const Action a = Click{9};
  (void)validate_action(a, s);
  EXPECT_EQ(s.elements, copy.elements);
  EXPECT_EQ(a, Action(Click{9}));
}
