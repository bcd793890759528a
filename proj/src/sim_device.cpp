#include "moba/sim_device.hpp"

#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

namespace moba::sim {

namespace {

using ojson = nlohmann::ordered_json;

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

double popup_draw(std::uint64_t seed, int step, const std::string& popup_id) {
  std::uint64_t h = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(step) ^ fnv1a(popup_id)));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\n': out += "&#10;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string_view trigger_name(Trigger t) {
  switch (t) {
    case Trigger::Click: return "Click";
    case Trigger::LongPress: return "LongPress";
    case Trigger::DoubleClick: return "DoubleClick";
    case Trigger::BoxInput: return "BoxInput";
    case Trigger::Type: return "Type";
  }
  return "?";
}

bool interactive(const ElementSpec& e) { return e.clickable || e.scrollable || e.editable; }

AppSpec make_launcher(const std::map<std::string, AppSpec>& apps) {
  AppSpec launcher;
  launcher.app_id = kLauncherApp;
  launcher.description = "home screen";
  launcher.initial_screen = "home";
  ScreenSpec home;
  home.id = "home";
  int i = 0;
  for (const auto& [id, app] : apps) {
    const int col = i % 4;
    const int row = i / 4;
    ElementSpec icon;
    icon.key = "icon_" + id;
    icon.bounds = Rect{40 + col * 260, 300 + row * 320, 260 + col * 260, 580 + row * 320};
    icon.clickable = true;
    icon.text = id;
    icon.content_desc = app.description;
    icon.class_name = "android.widget.TextView";
    Effect open;
    open.kind = Effect::Kind::OpenApp;
    open.target = id;
    icon.transitions.push_back(TransitionRule{Trigger::Click, {}, {open}});
    home.elements.push_back(std::move(icon));
    ++i;
  }
  launcher.screens.emplace("home", std::move(home));
  return launcher;
}

}  // namespace

std::string_view to_string(DeviceErrc e) {
  switch (e) {
    case DeviceErrc::NonScrollableTarget: return "NonScrollableTarget";
    case DeviceErrc::UnknownApp: return "UnknownApp";
    case DeviceErrc::NoFocusedInput: return "NoFocusedInput";
    case DeviceErrc::IndexOutOfRange: return "IndexOutOfRange";
    case DeviceErrc::UnknownScreen: return "UnknownScreen";
  }
  return "?";
}

int distance_rows(const DistanceSpec& dist, int visible_rows) {
  if (const int* rows = std::get_if<int>(&dist)) return *rows;
  double frac = 0.5;
  switch (std::get<Magnitude>(dist)) {
    case Magnitude::Short: frac = 0.25; break;
    case Magnitude::Medium: frac = 0.5; break;
    case Magnitude::Long: frac = 0.8; break;
  }
  return static_cast<int>(std::lround(frac * visible_rows));
}

ojson EventRecord::to_json() const {
  ojson j;
  j["step"] = step;
  j["phase"] = "env";
  j["action"] = action;
  j["events"] = events;
  j["screen_before"] = screen_before;
  j["screen_after"] = screen_after;
  j["key_before"] = key_before;
  j["key_after"] = key_after;
  return j;
}

SimDevice::SimDevice(std::vector<AppSpec> apps, std::uint64_t seed, DistillConfig distill) : distill_(distill) {
  for (auto& a : apps) {
    if (apps_.count(a.app_id)) throw SpecValidationError(a.app_id + ".app_id", "duplicate app id");
    std::string id = a.app_id;
    apps_.emplace(std::move(id), std::move(a));
  }
  for (const auto& [id, app] : apps_) {
    for (const auto& [sid, s] : app.screens) {
      auto check = [&](const ElementSpec& el, const std::string& path) {
        for (std::size_t t = 0; t < el.transitions.size(); ++t)
          for (std::size_t k = 0; k < el.transitions[t].effects.size(); ++k) {
            const Effect& e = el.transitions[t].effects[k];
            if ((e.kind == Effect::Kind::OpenApp || e.kind == Effect::Kind::CloseApp) && !apps_.count(e.target))
              throw SpecValidationError(path + ".transitions[" + std::to_string(t) + "].effects[" +
                                            std::to_string(k) + "]",
                                        "unknown app '" + e.target + "'");
          }
      };
      for (std::size_t i = 0; i < s.elements.size(); ++i)
        check(s.elements[i], id + ".screens." + sid + ".elements[" + std::to_string(i) + "]");
      if (s.scroll_window)
        for (std::size_t i = 0; i < s.scroll_window->rows.size(); ++i)
          check(s.scroll_window->rows[i], id + ".screens." + sid + ".scroll_window.rows[" + std::to_string(i) + "]");
    }
  }
  AppSpec launcher = make_launcher(apps_);
  apps_.emplace(kLauncherApp, std::move(launcher));
  for (const auto& [id, app] : apps_) {
    state_.vars[id] = app.vars;
    state_.app_screen[id] = app.initial_screen;
  }
  state_.rng_seed = seed;
  for (const auto& el : screen_spec().elements)
    if (el.focused) state_.focused_element = el.key;
}

SimDevice SimDevice::load(const std::vector<std::filesystem::path>& spec_files, std::uint64_t seed) {
  std::vector<AppSpec> apps;
  for (const auto& f : spec_files) apps.push_back(load_app_spec(f));
  return SimDevice(std::move(apps), seed);
}

std::vector<std::string> SimDevice::installed_apps() const {
  std::vector<std::string> out;
  for (const auto& [id, app] : apps_)
    if (id != kLauncherApp) out.push_back(id);
  return out;
}

const AppSpec& SimDevice::app(const std::string& app_id) const {
  auto it = apps_.find(app_id);
  if (it == apps_.end()) throw DeviceError(DeviceErrc::UnknownApp, "unknown app '" + app_id + "'");
  return it->second;
}

std::string SimDevice::var(const std::string& app, const std::string& name) const {
  auto a = state_.vars.find(app);
  if (a == state_.vars.end()) return {};
  auto v = a->second.find(name);
  return v == a->second.end() ? std::string{} : v->second;
}

std::string SimDevice::offset_key() const { return state_.current.app + ":" + state_.current.screen; }

int SimDevice::scroll_offset() const {
  auto it = state_.scroll_offset.find(offset_key());
  return it == state_.scroll_offset.end() ? 0 : it->second;
}

std::string SimDevice::screen_name() const { return state_.current.app + ":" + state_.current.screen; }

std::string SimDevice::screen_key() const {
  std::string material = state_.current.app + '\x1f' + state_.current.screen + '\x1f' +
                         std::to_string(scroll_offset()) + '\x1f' + state_.active_popup.value_or("");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(material)));
  return buf;
}

const ScreenSpec& SimDevice::screen_spec() const {
  const AppSpec& a = app(state_.current.app);
  auto it = a.screens.find(state_.current.screen);
  if (it == a.screens.end())
    throw DeviceError(DeviceErrc::UnknownScreen, "unknown screen '" + state_.current.screen + "'");
  return it->second;
}

std::vector<SimDevice::Rendered> SimDevice::render() const {
  const ScreenSpec& s = screen_spec();
  std::vector<Rendered> out;
  if (state_.active_popup) {
    for (const auto& p : s.popups) {
      if (p.popup_id != *state_.active_popup) continue;
      Rendered body;
      body.spec.key = "popup_" + p.popup_id;
      body.spec.bounds = Rect{90, 900, 990, 1300};
      body.spec.text = p.text;
      out.push_back(std::move(body));
      Rendered dismiss{p.dismiss_element, false, true};
      out.push_back(std::move(dismiss));
    }
    return out;
  }
  const auto& vars = state_.vars.at(state_.current.app);
  for (const auto& el : s.elements) {
    Rendered r{el, false, false};
    if (el.editable) {
      auto v = vars.find(el.bind_var);
      if (v != vars.end() && !v->second.empty()) r.spec.text = v->second;
    }
    r.spec.focused = state_.focused_element && *state_.focused_element == el.key;
    out.push_back(std::move(r));
  }
  if (s.scroll_window) {
    const ScrollWindow& w = *s.scroll_window;
    const int offset = scroll_offset();
    const int end = std::min(offset + w.visible_rows, w.total_rows());
    for (int i = offset; i < end; ++i) {
      Rendered r{w.rows[static_cast<std::size_t>(i)], true, false};
      const int top = w.top + (i - offset) * w.row_height;
      r.spec.bounds = Rect{w.left, top, w.right, top + w.row_height};
      if (r.spec.editable) {
        auto v = vars.find(r.spec.bind_var);
        if (v != vars.end() && !v->second.empty()) r.spec.text = v->second;
      }
      r.spec.focused = state_.focused_element && *state_.focused_element == r.spec.key;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::string SimDevice::render_xml(const std::vector<Rendered>& elems) const {
  auto flag = [](bool b) { return b ? "true" : "false"; };
  std::ostringstream x;
  x << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<hierarchy rotation=\"0\">\n";
  for (const auto& r : elems) {
    const ElementSpec& e = r.spec;
    x << "  <node text=\"" << xml_escape(e.text) << "\" resource-id=\"" << xml_escape(state_.current.app) << ":id/"
      << xml_escape(e.key) << "\" class=\"" << xml_escape(e.class_name) << "\" package=\""
      << xml_escape(state_.current.app) << "\" content-desc=\"" << xml_escape(e.content_desc) << "\" clickable=\""
      << flag(e.clickable) << "\" long-clickable=\"" << flag(e.clickable) << "\" scrollable=\"" << flag(e.scrollable)
      << "\" editable=\"" << flag(e.editable) << "\" focused=\"" << flag(e.focused) << "\" bounds=\"["
      << e.bounds.left << "," << e.bounds.top << "][" << e.bounds.right << "," << e.bounds.bottom << "]\" />\n";
  }
  x << "</hierarchy>\n";
  return x.str();
}

RawObservation SimDevice::observe() const { return {render_xml(render()), screen_key(), screen_name()}; }

ScreenObservation SimDevice::observe_distilled() const {
  RawObservation raw = observe();
  ScreenObservation obs = make_observation(raw.vh_xml, raw.screen_key, raw.screen_name,
                                           ScreenSize{kDeviceWidth, kDeviceHeight}, distill_);
  return obs;
}

std::optional<SimDevice::Rendered> SimDevice::resolve_index(int index) const {
  const ScreenObservation obs = observe_distilled();
  const UiElement* el = obs.find_index(index);
  if (!el) return std::nullopt;
  for (const auto& r : render())
    if (interactive(r.spec) && r.spec.bounds == el->bounds) return r;
  return std::nullopt;
}

std::optional<SimDevice::Rendered> SimDevice::resolve_point(double fx, double fy) const {
  const double px = fx * kDeviceWidth;
  const double py = fy * kDeviceHeight;
  std::optional<Rendered> best;
  for (const auto& r : render()) {
    const Rect& b = r.spec.bounds;
    if (!interactive(r.spec) || px < b.left || px > b.right || py < b.top || py > b.bottom) continue;
    if (!best || b.area() < best->spec.bounds.area()) best = r;
  }
  return best;
}

void SimDevice::fail(DeviceErrc code, const std::string& msg, ActionOutcome& out) {
  out.error = code;
  out.error_message = msg;
  out.events.push_back({{"type", "error"}, {"code", std::string(to_string(code))}, {"message", msg}});
}

void SimDevice::go_to(const Location& loc, bool push, ActionOutcome& out) {
  if (push) state_.back_stack.push_back(state_.current);
  state_.current = loc;
  state_.app_screen[loc.app] = loc.screen;
  state_.focused_element.reset();
  for (const auto& el : screen_spec().elements)
    if (el.focused) state_.focused_element = el.key;
  out.events.push_back({{"type", "goto"}, {"app", loc.app}, {"screen", loc.screen}});
}

void SimDevice::open_app(const std::string& id, ActionOutcome& out) {
  const AppSpec& a = app(id);
  std::string screen = a.initial_screen;
  if (auto it = state_.app_screen.find(id); it != state_.app_screen.end()) screen = it->second;
  out.events.push_back({{"type", "open_app"}, {"app", id}});
  go_to(Location{id, screen}, true, out);
}

void SimDevice::close_app(const std::string& id, ActionOutcome& out) {
  const AppSpec& a = app(id);
  state_.app_screen[id] = a.initial_screen;
  std::erase_if(state_.back_stack, [&](const Location& l) { return l.app == id; });
  for (auto it = state_.scroll_offset.begin(); it != state_.scroll_offset.end();) {
    if (it->first.rfind(id + ":", 0) == 0)
      it = state_.scroll_offset.erase(it);
    else
      ++it;
  }
  out.events.push_back({{"type", "close_app"}, {"app", id}});
  const AppSpec& launcher = apps_.at(kLauncherApp);
  go_to(Location{kLauncherApp, launcher.initial_screen}, false, out);
}

void SimDevice::set_var(const std::string& app_id, const std::string& name, const std::string& value,
                        ActionOutcome& out) {
  state_.vars[app_id][name] = value;
  out.events.push_back({{"type", "set_var"}, {"app", app_id}, {"name", name}, {"value", value}});
}

void SimDevice::run_effects(const std::vector<Effect>& effects, ActionOutcome& out) {
  const std::string owner = state_.current.app;
  for (const auto& e : effects) {
    switch (e.kind) {
      case Effect::Kind::GotoScreen:
        go_to(Location{owner, e.target}, true, out);
        break;
      case Effect::Kind::SetVar:
        set_var(owner, e.name, e.value, out);
        break;
      case Effect::Kind::PushEvent:
        out.events.push_back({{"type", "event"}, {"app", owner}, {"name", e.name}, {"payload", e.value}});
        break;
      case Effect::Kind::OpenApp:
        open_app(e.target, out);
        break;
      case Effect::Kind::CloseApp:
        close_app(e.target, out);
        break;
    }
  }
}

void SimDevice::fire(const ElementSpec& el, Trigger trigger, ActionOutcome& out, bool report_ineffective) {
  const auto& vars = state_.vars[state_.current.app];
  bool any = false;
  for (const auto& rule : el.transitions) {
    if (rule.on != trigger) continue;
    any = true;
    const bool holds = std::all_of(rule.guards.begin(), rule.guards.end(), [&](const Guard& g) {
      auto it = vars.find(g.var);
      const std::string cur = it == vars.end() ? std::string{} : it->second;
      return (cur == g.value) == g.equals;
    });
    if (holds) {
      run_effects(rule.effects, out);
      return;
    }
  }
  if (any)
    out.events.push_back({{"type", "guard_blocked"}, {"element", el.key}, {"trigger", trigger_name(trigger)}});
  else if (report_ineffective)
    out.events.push_back({{"type", "ineffective_tap"}, {"element", el.key}, {"trigger", trigger_name(trigger)}});
}

void SimDevice::tap(const Rendered& el, Trigger trigger, ActionOutcome& out) {
  out.events.push_back({{"type", "tap"}, {"element", el.spec.key}, {"trigger", trigger_name(trigger)}});
  if (el.is_dismiss) {
    out.events.push_back({{"type", "popup_dismissed"}, {"popup", state_.active_popup.value_or("")}});
    state_.active_popup.reset();
    return;
  }
  bool focused_now = false;
  if (trigger == Trigger::Click && el.spec.editable) {
    state_.focused_element = el.spec.key;
    out.events.push_back({{"type", "focus"}, {"element", el.spec.key}});
    focused_now = true;
  }
  fire(el.spec, trigger, out, !focused_now);
}

void SimDevice::scroll_by(Direction dir, const DistanceSpec& dist, ActionOutcome& out) {
  const ScreenSpec& s = screen_spec();
  if (!s.scroll_window || dir == Direction::Left || dir == Direction::Right) {
    out.events.push_back({{"type", "ineffective_swipe"}, {"direction", std::string(to_string(dir))}});
    return;
  }
  const ScrollWindow& w = *s.scroll_window;
  const int rows = distance_rows(dist, w.visible_rows);
  const int from = scroll_offset();
  const int to = std::clamp(dir == Direction::Down ? from + rows : from - rows, 0, w.max_offset());
  state_.scroll_offset[offset_key()] = to;
  out.events.push_back({{"type", "scroll"}, {"from", from}, {"to", to}});
}

void SimDevice::roll_popups(ActionOutcome& out) {
  if (state_.active_popup) return;
  for (const auto& p : screen_spec().popups) {
    if (popup_draw(state_.rng_seed, state_.step, p.popup_id) < p.probability) {
      state_.active_popup = p.popup_id;
      out.events.push_back({{"type", "popup_shown"}, {"popup", p.popup_id}});
      return;
    }
  }
}

ActionOutcome SimDevice::apply(const Action& action, const AppResolver& resolver) {
  ActionOutcome out;
  const std::string name_before = screen_name();
  const std::string key_before = screen_key();

  auto need = [&](int index) -> std::optional<Rendered> {
    auto r = resolve_index(index);
    if (!r) fail(DeviceErrc::IndexOutOfRange, "no interactive element with index " + std::to_string(index), out);
    return r;
  };

  std::visit(
      [&](const auto& a) {
        using T = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<T, actions::Click>) {
          if (auto r = need(a.element_index)) tap(*r, Trigger::Click, out);
        } else if constexpr (std::is_same_v<T, actions::ClickByCoordinate>) {
          if (auto r = resolve_point(a.x, a.y))
            tap(*r, Trigger::Click, out);
          else
            out.events.push_back({{"type", "ineffective_tap"}, {"x", a.x}, {"y", a.y}});
        } else if constexpr (std::is_same_v<T, actions::DoubleClick>) {
          if (auto r = need(a.element_index)) tap(*r, Trigger::DoubleClick, out);
        } else if constexpr (std::is_same_v<T, actions::LongPress>) {
          if (auto r = need(a.element_index)) tap(*r, Trigger::LongPress, out);
        } else if constexpr (std::is_same_v<T, actions::Scroll>) {
          if (auto r = need(a.element_index)) {
            if (!r->spec.scrollable)
              fail(DeviceErrc::NonScrollableTarget, "element '" + r->spec.key + "' is not scrollable", out);
            else
              scroll_by(a.direction, a.distance, out);
          }
        } else if constexpr (std::is_same_v<T, actions::Swipe>) {
          scroll_by(a.direction, a.distance, out);
        } else if constexpr (std::is_same_v<T, actions::Type>) {
          const Rendered* target = nullptr;
          const auto rendered = render();
          if (state_.focused_element)
            for (const auto& r : rendered)
              if (r.spec.key == *state_.focused_element && r.spec.editable) target = &r;
          if (!target) {
            fail(DeviceErrc::NoFocusedInput, "no focused input box", out);
          } else {
            const std::string app_id = state_.current.app;
            set_var(app_id, target->spec.bind_var, var(app_id, target->spec.bind_var) + a.text, out);
            fire(target->spec, Trigger::Type, out, false);
          }
        } else if constexpr (std::is_same_v<T, actions::Back>) {
          if (state_.active_popup) {
            out.events.push_back({{"type", "popup_dismissed"}, {"popup", *state_.active_popup}});
            state_.active_popup.reset();
          } else if (!state_.back_stack.empty()) {
            Location prev = state_.back_stack.back();
            state_.back_stack.pop_back();
            out.events.push_back({{"type", "back"}});
            go_to(prev, false, out);
          } else if (state_.current.app != kLauncherApp) {
            out.events.push_back({{"type", "back"}});
            go_to(Location{kLauncherApp, apps_.at(kLauncherApp).initial_screen}, false, out);
          } else {
            out.events.push_back({{"type", "back_at_launcher"}});
          }
        } else if constexpr (std::is_same_v<T, actions::BoxInput>) {
          if (auto r = need(a.element_index)) {
            if (!r->spec.editable) {
              out.events.push_back({{"type", "ineffective_tap"}, {"element", r->spec.key}, {"trigger", "BoxInput"}});
            } else {
              state_.focused_element = r->spec.key;
              out.events.push_back({{"type", "focus"}, {"element", r->spec.key}});
              if (r->spec.char_input_only) {
                out.events.push_back({{"type", "input_rejected"}, {"element", r->spec.key}});
              } else {
                set_var(state_.current.app, r->spec.bind_var, a.text, out);
                fire(r->spec, Trigger::BoxInput, out, false);
              }
            }
          }
        } else if constexpr (std::is_same_v<T, actions::OpenApp>) {
          if (!a.description) {
            fail(DeviceErrc::UnknownApp, "Open_App needs an app description", out);
            return;
          }
          std::optional<std::string> id;
          if (apps_.count(*a.description))
            id = *a.description;
          else if (resolver)
            id = resolver(*a.description);
          if (!id || !apps_.count(*id))
            fail(DeviceErrc::UnknownApp, "no installed app matches '" + *a.description + "'", out);
          else
            open_app(*id, out);
        } else if constexpr (std::is_same_v<T, actions::CloseApp>) {
          const std::string id = a.package_name.value_or(state_.current.app);
          if (id == kLauncherApp || !apps_.count(id))
            fail(DeviceErrc::UnknownApp, "cannot close '" + id + "'", out);
          else
            close_app(id, out);
        } else if constexpr (std::is_same_v<T, actions::Failed>) {
          out.events.push_back({{"type", "failed"}});
        } else if constexpr (std::is_same_v<T, actions::Finish>) {
          out.events.push_back({{"type", "finish"}});
        }
      },
      action);

  ++state_.step;
  roll_popups(out);

  EventRecord rec;
  rec.step = state_.step;
  rec.action = format_action(action);
  rec.events = out.events;
  rec.screen_before = name_before;
  rec.screen_after = screen_name();
  rec.key_before = key_before;
  rec.key_after = screen_key();
  out.screen_changed = rec.key_before != rec.key_after;
  if (sink_) sink_->append(rec.to_json());
  state_.event_log.push_back(std::move(rec));
  return out;
}

void SimDevice::prepare_set_var(const std::string& app_id, const std::string& name, const std::string& value) {
  app(app_id);
  state_.vars[app_id][name] = value;
}

void SimDevice::prepare_goto(const std::string& app_id, const std::string& screen) {
  const AppSpec& a = app(app_id);
  if (!a.screens.count(screen)) throw DeviceError(DeviceErrc::UnknownScreen, "unknown screen '" + screen + "'");
  if (state_.current.app != app_id && app_id != kLauncherApp) state_.back_stack.push_back(state_.current);
  state_.current = Location{app_id, screen};
  state_.app_screen[app_id] = screen;
  state_.focused_element.reset();
  for (const auto& el : screen_spec().elements)
    if (el.focused) state_.focused_element = el.key;
}

ojson SimDevice::serialize_state() const {
  ojson j;
  j["current"] = {{"app", state_.current.app}, {"screen", state_.current.screen}};
  ojson stack = ojson::array();
  for (const auto& l : state_.back_stack) stack.push_back({{"app", l.app}, {"screen", l.screen}});
  j["back_stack"] = stack;
  j["vars"] = state_.vars;
  j["app_screen"] = state_.app_screen;
  j["scroll_offset"] = state_.scroll_offset;
  j["focused_element"] = state_.focused_element ? ojson(*state_.focused_element) : ojson(nullptr);
  j["active_popup"] = state_.active_popup ? ojson(*state_.active_popup) : ojson(nullptr);
  j["rng_seed"] = state_.rng_seed;
  j["step"] = state_.step;
  ojson log = ojson::array();
  for (const auto& r : state_.event_log) log.push_back(r.to_json());
  j["event_log"] = log;
  j["installed_apps"] = installed_apps();
  return j;
}

}  // namespace moba::sim
