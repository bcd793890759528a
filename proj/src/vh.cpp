#include "moba/vh.hpp"

#include <expat.h>

#include <algorithm>
#include <charconv>
#include <cstring>
#include <memory>
#include <numeric>
#include <sstream>

namespace moba {

std::int64_t intersection_area(const Rect& a, const Rect& b) {
  std::int64_t w = std::int64_t(std::min(a.right, b.right)) - std::max(a.left, b.left);
  std::int64_t h = std::int64_t(std::min(a.bottom, b.bottom)) - std::max(a.top, b.top);
  if (w <= 0 || h <= 0) return 0;
  return w * h;
}

double iou(const Rect& a, const Rect& b) {
  std::int64_t inter = intersection_area(a, b);
  std::int64_t uni = a.area() + b.area() - inter;
  if (uni <= 0) return a == b ? 1.0 : 0.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------
// parsing

Rect parse_bounds(std::string_view s) {
  int v[4];
  std::size_t pos = 0;
  auto fail = [&] { return VhParseError(VhErrc::MalformedBounds, "malformed bounds \"" + std::string(s) + "\""); };
  auto expect = [&](char c) {
    if (pos >= s.size() || s[pos] != c) throw fail();
    ++pos;
  };
  auto number = [&](int& out) {
    auto [p, ec] = std::from_chars(s.data() + pos, s.data() + s.size(), out);
    if (ec != std::errc()) throw fail();
    pos = static_cast<std::size_t>(p - s.data());
  };
  for (int k = 0; k < 2; ++k) {
    expect('[');
    number(v[2 * k]);
    expect(',');
    number(v[2 * k + 1]);
    expect(']');
  }
  if (pos != s.size()) throw fail();
  Rect r{v[0], v[1], v[2], v[3]};
  if (r.left > r.right || r.top > r.bottom) throw fail();
  return r;
}

namespace {

struct ParseState {
  XML_Parser parser = nullptr;
  std::vector<RawNode*> stack;
  std::unique_ptr<RawNode> root;
  bool root_is_wrapper = false;  // e.g. <hierarchy> around the first <node>
  std::optional<VhParseError> error;
};

bool is_true(const char* v) { return std::strcmp(v, "true") == 0; }

void on_start(void* user, const XML_Char* name, const XML_Char** attrs) {
  auto* st = static_cast<ParseState*>(user);
  if (st->error) return;
  RawNode node;
  try {
    for (int i = 0; attrs[i]; i += 2) {
      const char* key = attrs[i];
      const char* val = attrs[i + 1];
      if (std::strcmp(key, "bounds") == 0)
        node.bounds = parse_bounds(val);
      else if (std::strcmp(key, "clickable") == 0 || std::strcmp(key, "long-clickable") == 0)
        node.clickable = node.clickable || is_true(val);
      else if (std::strcmp(key, "scrollable") == 0)
        node.scrollable = is_true(val);
      else if (std::strcmp(key, "editable") == 0)
        node.editable = node.editable || is_true(val);
      else if (std::strcmp(key, "focused") == 0)
        node.focused = is_true(val);
      else if (std::strcmp(key, "text") == 0)
        node.text = val;
      else if (std::strcmp(key, "content-desc") == 0)
        node.content_desc = val;
      else if (std::strcmp(key, "class") == 0)
        node.class_name = val;
      else if (std::strcmp(key, "package") == 0)
        node.package = val;
    }
  } catch (const VhParseError& e) {
    st->error = e;
    XML_StopParser(st->parser, XML_FALSE);
    return;
  }
  if (node.class_name.find("EditText") != std::string::npos) node.editable = true;

  if (st->stack.empty()) {
    st->root_is_wrapper = std::strcmp(name, "node") != 0;
    st->root = std::make_unique<RawNode>(std::move(node));
    st->stack.push_back(st->root.get());
  } else {
    auto& siblings = st->stack.back()->children;
    siblings.push_back(std::move(node));
    st->stack.push_back(&siblings.back());
  }
}

void on_end(void* user, const XML_Char*) {
  auto* st = static_cast<ParseState*>(user);
  if (!st->stack.empty()) st->stack.pop_back();
}

}  // namespace

RawNode parse_vh(std::string_view xml) {
  ParseState st;
  std::unique_ptr<std::remove_pointer_t<XML_Parser>, decltype(&XML_ParserFree)> parser(
      XML_ParserCreate("UTF-8"), &XML_ParserFree);
  st.parser = parser.get();
  XML_SetUserData(st.parser, &st);
  XML_SetElementHandler(st.parser, on_start, on_end);
  // children vectors grow while parent pointers are held on the stack; pointers
  // stay valid because a parent's vector is only appended to while it is on top.
  auto status = XML_Parse(st.parser, xml.data(), static_cast<int>(xml.size()), XML_TRUE);
  if (st.error) throw *st.error;
  if (status != XML_STATUS_OK) {
    std::ostringstream msg;
    msg << "xml syntax error at line " << XML_GetCurrentLineNumber(st.parser) << ": "
        << XML_ErrorString(XML_GetErrorCode(st.parser));
    throw VhParseError(VhErrc::XmlSyntax, msg.str());
  }
  if (!st.root) throw VhParseError(VhErrc::XmlSyntax, "empty document");
  if (st.root_is_wrapper && st.root->children.size() == 1) return std::move(st.root->children.front());
  return std::move(*st.root);
}

// ---------------------------------------------------------------------------
// distillation

void DistillConfig::validate() const {
  auto frac = [](double v, const char* name) {
    if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument(std::string(name) + " must lie in (0,1)");
  };
  frac(min_area_fraction, "min_area_fraction");
  frac(max_overlap_iou, "max_overlap_iou");
  frac(text_containment_fraction, "text_containment_fraction");
  if (row_tolerance_px < 0) throw std::invalid_argument("row_tolerance_px must be >= 0");
}

DistillConfig distill_config_from_json(const nlohmann::json& j) {
  DistillConfig c;
  c.min_area_fraction = j.value("min_area_fraction", c.min_area_fraction);
  c.max_overlap_iou = j.value("max_overlap_iou", c.max_overlap_iou);
  c.text_containment_fraction = j.value("text_containment_fraction", c.text_containment_fraction);
  c.row_tolerance_px = j.value("row_tolerance_px", c.row_tolerance_px);
  c.treat_all_as_interactive = j.value("treat_all_as_interactive", c.treat_all_as_interactive);
  c.validate();
  return c;
}

namespace {

struct FlatNode {
  const RawNode* node;
  std::size_t doc_order;
  bool interactive;
  std::string text;
};

void flatten(const RawNode& n, const DistillConfig& cfg, std::vector<FlatNode>& out) {
  bool interactive = n.clickable || n.scrollable || n.editable ||
                     (cfg.treat_all_as_interactive && n.children.empty());
  out.push_back({&n, out.size(), interactive, n.text.empty() ? n.content_desc : n.text});
  for (const auto& c : n.children) flatten(c, cfg, out);
}

// Stable row-major order: group by center_y (a row holds every center within
// tolerance of its first member), then left to right.
std::vector<std::size_t> row_major_order(const std::vector<Rect>& rects, int tolerance) {
  std::vector<std::size_t> by_y(rects.size());
  std::iota(by_y.begin(), by_y.end(), 0);
  std::stable_sort(by_y.begin(), by_y.end(),
                   [&](std::size_t a, std::size_t b) { return rects[a].center_y() < rects[b].center_y(); });
  std::vector<std::size_t> out;
  out.reserve(rects.size());
  std::size_t i = 0;
  while (i < by_y.size()) {
    double anchor = rects[by_y[i]].center_y();
    std::size_t j = i;
    while (j < by_y.size() && rects[by_y[j]].center_y() - anchor <= tolerance) ++j;
    std::vector<std::size_t> row(by_y.begin() + i, by_y.begin() + j);
    std::stable_sort(row.begin(), row.end(), [&](std::size_t a, std::size_t b) {
      if (rects[a].center_x() != rects[b].center_x()) return rects[a].center_x() < rects[b].center_x();
      return a < b;
    });
    out.insert(out.end(), row.begin(), row.end());
    i = j;
  }
  return out;
}

}  // namespace

std::vector<UiElement> distill(const RawNode& root, ScreenSize screen, const DistillConfig& config) {
  return distill(root, screen, config, nullptr);
}

std::vector<UiElement> distill(const RawNode& root, ScreenSize screen, const DistillConfig& config,
                               DistillTrace* trace) {
  DistillTrace local;
  DistillTrace& tr = trace ? *trace : local;
  tr = {};

  std::vector<FlatNode> all;
  flatten(root, config, all);
  for (const auto& f : all)
    if (f.interactive) ++tr.interactive_input;

  // Pass 1: drop small nodes, order by area (document order on ties).
  const double min_area = config.min_area_fraction * double(screen.width) * double(screen.height);
  std::vector<FlatNode> nodes;
  for (auto& f : all) {
    if (static_cast<double>(f.node->bounds.area()) < min_area) {
      if (f.interactive) ++tr.dropped_small_interactive;
      continue;
    }
    nodes.push_back(f);
  }
  std::stable_sort(nodes.begin(), nodes.end(),
                   [](const FlatNode& a, const FlatNode& b) { return a.node->bounds.area() < b.node->bounds.area(); });

  // Pass 2: accept interactive nodes that do not overlap earlier acceptances.
  std::vector<const FlatNode*> accepted;
  for (const auto& f : nodes) {
    if (!f.interactive) continue;
    bool ok = std::all_of(accepted.begin(), accepted.end(), [&](const FlatNode* a) {
      return iou(a->node->bounds, f.node->bounds) <= config.max_overlap_iou;
    });
    if (ok)
      accepted.push_back(&f);
    else
      ++tr.rejected_overlap;
  }
  tr.accepted = accepted.size();

  // Pass 3: merge text into the first host (acceptance order) that contains it.
  std::vector<std::string> merged(accepted.size());
  std::vector<const FlatNode*> text_nodes;
  for (const auto& f : nodes)
    if (!f.text.empty()) text_nodes.push_back(&f);
  std::stable_sort(text_nodes.begin(), text_nodes.end(),
                   [](const FlatNode* a, const FlatNode* b) { return a->doc_order < b->doc_order; });

  std::vector<const FlatNode*> leftover_text;
  for (const FlatNode* t : text_nodes) {
    std::optional<std::size_t> host;
    for (std::size_t h = 0; h < accepted.size(); ++h) {
      if (accepted[h] == t) {
        host = h;
        break;
      }
    }
    if (!host) {
      const double need = config.text_containment_fraction * static_cast<double>(t->node->bounds.area());
      for (std::size_t h = 0; h < accepted.size(); ++h) {
        if (static_cast<double>(intersection_area(t->node->bounds, accepted[h]->node->bounds)) >= need) {
          host = h;
          break;
        }
      }
    }
    if (host) {
      if (!merged[*host].empty()) merged[*host].push_back(' ');
      merged[*host] += t->text;
      ++tr.merged_text_nodes;
    } else {
      leftover_text.push_back(t);
    }
  }
  tr.surviving_text_nodes = leftover_text.size();

  // Pass 4: row-major ordering and index assignment.
  std::vector<Rect> rects;
  for (const auto* a : accepted) rects.push_back(a->node->bounds);
  std::vector<UiElement> out;
  int next_index = 0;
  for (std::size_t k : row_major_order(rects, config.row_tolerance_px)) {
    const RawNode& n = *accepted[k]->node;
    UiElement e;
    e.index = next_index++;
    e.bounds = n.bounds;
    e.interactive = true;
    e.merged_text = merged[k];
    e.clickable = n.clickable || (config.treat_all_as_interactive && n.children.empty());
    e.scrollable = n.scrollable;
    e.editable = n.editable;
    e.focused = n.focused;
    e.class_name = n.class_name;
    out.push_back(std::move(e));
  }

  std::vector<Rect> text_rects;
  for (const auto* t : leftover_text) text_rects.push_back(t->node->bounds);
  for (std::size_t k : row_major_order(text_rects, config.row_tolerance_px)) {
    const RawNode& n = *leftover_text[k]->node;
    UiElement e;
    e.index = -1;
    e.bounds = n.bounds;
    e.merged_text = leftover_text[k]->text;
    e.class_name = n.class_name;
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<OverlayInstruction> annotate(const std::vector<UiElement>& elements) {
  std::vector<OverlayInstruction> out;
  for (const auto& e : elements)
    if (e.index >= 0) out.push_back({e.bounds, std::to_string(e.index)});
  return out;
}

nlohmann::ordered_json to_json(const UiElement& e) {
  nlohmann::ordered_json j;
  j["index"] = e.index;
  j["bounds"] = {e.bounds.left, e.bounds.top, e.bounds.right, e.bounds.bottom};
  j["interactive"] = e.interactive;
  j["text"] = e.merged_text;
  j["clickable"] = e.clickable;
  j["scrollable"] = e.scrollable;
  j["editable"] = e.editable;
  j["class"] = e.class_name;
  return j;
}

nlohmann::ordered_json to_json(const std::vector<UiElement>& elements) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& e : elements) arr.push_back(to_json(e));
  return arr;
}

nlohmann::ordered_json to_json(const std::vector<OverlayInstruction>& overlay) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& o : overlay) {
    nlohmann::ordered_json j;
    j["bounds"] = {o.bounds.left, o.bounds.top, o.bounds.right, o.bounds.bottom};
    j["label"] = o.label;
    arr.push_back(std::move(j));
  }
  return arr;
}

// ---------------------------------------------------------------------------
// observation

std::size_t ScreenObservation::interactive_count() const {
  return static_cast<std::size_t>(
      std::count_if(elements.begin(), elements.end(), [](const UiElement& e) { return e.index >= 0; }));
}

const UiElement* ScreenObservation::find_index(int index) const {
  for (const auto& e : elements)
    if (e.index == index && index >= 0) return &e;
  return nullptr;
}

std::string ScreenObservation::describe() const {
  std::ostringstream os;
  os << "screen: " << screen_name << "\n";
  if (focused_input) os << "focused input: yes\n";
  for (const auto& e : elements) {
    os << "[" << e.index << "]";
    auto dot = e.class_name.rfind('.');
    std::string cls = dot == std::string::npos ? e.class_name : e.class_name.substr(dot + 1);
    if (!cls.empty()) os << " " << cls;
    if (!e.merged_text.empty()) os << " \"" << e.merged_text << "\"";
    if (e.clickable) os << " clickable";
    if (e.scrollable) os << " scrollable";
    if (e.editable) os << " editable";
    os << " [" << e.bounds.left << "," << e.bounds.top << "][" << e.bounds.right << "," << e.bounds.bottom << "]\n";
  }
  return os.str();
}

namespace {
bool any_focused_editable(const RawNode& n) {
  if (n.editable && n.focused) return true;
  return std::any_of(n.children.begin(), n.children.end(), any_focused_editable);
}
}  // namespace

ScreenObservation make_observation(std::string_view xml, std::string screen_key, std::string screen_name,
                                   ScreenSize size, const DistillConfig& config) {
  RawNode root = parse_vh(xml);
  ScreenObservation obs;
  obs.screen_key = std::move(screen_key);
  obs.screen_name = std::move(screen_name);
  obs.elements = distill(root, size, config);
  obs.focused_input = any_focused_editable(root);
  return obs;
}

}  // namespace moba
