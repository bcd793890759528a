#include "moba/memory.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace moba {

std::string_view to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::Pending: return "pending";
    case TaskStatus::InProgress: return "in_progress";
    case TaskStatus::Success: return "success";
    case TaskStatus::Failure: return "failure";
  }
  return "pending";
}

// ---------------------------------------------------------------------------
// embedding

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string normalise_text(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

}  // namespace

MemoryKey TrigramEmbedder::embed(std::string_view text) const {
  MemoryKey key;
  key.values.assign(dim_, 0.0);
  std::string norm = normalise_text(text);
  if (norm.empty()) {
    const double v = 1.0 / std::sqrt(static_cast<double>(dim_));
    std::fill(key.values.begin(), key.values.end(), v);
    return key;
  }
  std::string padded = " " + norm + " ";
  for (std::size_t i = 0; i + 3 <= padded.size(); ++i)
    key.values[fnv1a(std::string_view(padded).substr(i, 3)) % dim_] += 1.0;
  double norm2 = 0.0;
  for (double v : key.values) norm2 += v * v;
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& v : key.values) v *= inv;
  return key;
}

std::shared_ptr<const Embedder> default_embedder() {
  static const auto instance = std::make_shared<const TrigramEmbedder>(256);
  return instance;
}

double cosine(const MemoryKey& a, const MemoryKey& b) {
  if (a.values.size() != b.values.size())
    throw MemoryError(MemoryErrc::DimensionMismatch, "key dimensions differ: " + std::to_string(a.values.size()) +
                                                         " vs " + std::to_string(b.values.size()));
  double dot = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) dot += a.values[i] * b.values[i];
  return dot;
}

std::string_view to_string(Corpus c) {
  switch (c) {
    case Corpus::TaskHistory: return "task_history";
    case Corpus::RouteHistory: return "route_history";
    case Corpus::App: return "app";
    case Corpus::Page: return "page";
    case Corpus::User: return "user";
  }
  return "task_history";
}

std::optional<Corpus> corpus_from_name(std::string_view name) {
  for (Corpus c : {Corpus::TaskHistory, Corpus::RouteHistory, Corpus::App, Corpus::Page, Corpus::User})
    if (to_string(c) == name) return c;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// store

MemoryStore::MemoryStore(std::shared_ptr<const Embedder> embedder) : embedder_(std::move(embedder)) {
  if (!embedder_) embedder_ = default_embedder();
}

MemoryKey MemoryStore::embed(std::string_view text) const { return embedder_->embed(text); }

int MemoryStore::begin_episode() {
  ++episode_;
  action_memory_.clear();
  return episode_;
}

TaskNode& MemoryStore::mut_node(NodeId id) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw MemoryError(MemoryErrc::UnknownNode, "unknown node " + to_string(id));
  return it->second;
}

const TaskNode& MemoryStore::node(NodeId id) const {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) throw MemoryError(MemoryErrc::UnknownNode, "unknown node " + to_string(id));
  return it->second;
}

bool MemoryStore::contains(NodeId id) const { return nodes_.count(id) != 0; }

NodeId MemoryStore::insert_task_node(std::string goal, std::optional<NodeId> parent,
                                     std::optional<NodeId> explicit_id) {
  NodeId id = explicit_id.value_or(NodeId{next_id_});
  if (nodes_.count(id)) throw MemoryError(MemoryErrc::DuplicateId, "duplicate node id " + to_string(id));
  TaskNode n;
  n.id = id;
  n.goal = std::move(goal);
  n.episode = episode_;
  if (parent) {
    TaskNode& p = mut_node(*parent);
    n.parent = parent;
    n.depth = p.depth + 1;
    n.episode = p.episode;
    p.children.push_back(id);
  }
  nodes_.emplace(id, std::move(n));
  next_id_ = std::max(next_id_, id.value + 1);
  return id;
}

void MemoryStore::mark_status(NodeId id, TaskStatus status) { mut_node(id).status = status; }

void MemoryStore::append_action(NodeId id, ActionRecord record) {
  TaskNode& n = mut_node(id);
  if (n.action) throw MemoryError(MemoryErrc::DuplicateId, "node " + to_string(id) + " already carries an action");
  record.step_index = ++action_counter_[n.episode];
  n.kind = NodeKind::Action;
  n.action = std::move(record);
}

void MemoryStore::set_action_success(NodeId id, bool success) {
  TaskNode& n = mut_node(id);
  if (!n.action) throw MemoryError(MemoryErrc::UnknownNode, "node " + to_string(id) + " has no action");
  n.action->success = success;
  if (success)
    add_entry(Corpus::TaskHistory, n.goal, "success: " + n.goal + " -> " + format_action(n.action->action), id);
}

void MemoryStore::append_reflection(NodeId id, std::string reflection) {
  TaskNode& n = mut_node(id);
  std::string what = n.action ? format_action(n.action->action) : std::string("(no action)");
  if (n.action) n.action->reflection = reflection;
  add_entry(Corpus::TaskHistory, n.goal, "failure: " + n.goal + " -> " + what + "; reflection: " + reflection, id);
}

void MemoryStore::set_plan_reflection(NodeId id, std::string reflection) {
  mut_node(id).plan_reflection = std::move(reflection);
}

std::vector<NodeId> MemoryStore::episode_nodes(int episode) const {
  std::vector<NodeId> out;
  for (const auto& [id, n] : nodes_)
    if (n.episode == episode) out.push_back(id);
  return out;
}

std::vector<NodeId> MemoryStore::execution_order(int episode) const {
  std::vector<const TaskNode*> acts;
  for (const auto& [id, n] : nodes_)
    if (n.episode == episode && n.action) acts.push_back(&n);
  std::sort(acts.begin(), acts.end(),
            [](const TaskNode* a, const TaskNode* b) { return a->action->step_index < b->action->step_index; });
  std::vector<NodeId> out;
  for (const auto* n : acts) out.push_back(n->id);
  return out;
}

std::optional<int> MemoryStore::tree_distance(NodeId a, NodeId b) const {
  const TaskNode* x = &node(a);
  const TaskNode* y = &node(b);
  if (x->episode != y->episode) return std::nullopt;
  int dist = 0;
  while (x->depth > y->depth) {
    x = &node(*x->parent);
    ++dist;
  }
  while (y->depth > x->depth) {
    y = &node(*y->parent);
    ++dist;
  }
  while (x->id != y->id) {
    if (!x->parent || !y->parent) return std::nullopt;  // distinct roots
    x = &node(*x->parent);
    y = &node(*y->parent);
    dist += 2;
  }
  return dist;
}

RelationalContext MemoryStore::retrieve_relational(NodeId id) const {
  const TaskNode& n = node(id);
  RelationalContext ctx;
  if (n.parent) ctx.parent_goal = node(*n.parent).goal;
  auto order = execution_order(n.episode);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const TaskNode& a = node(*it);
    if (!ctx.last_success && a.action->success) ctx.last_success = a;
    if (!ctx.last_failure_with_reflection && !a.action->success && a.action->reflection)
      ctx.last_failure_with_reflection = a;
    if (ctx.last_success && ctx.last_failure_with_reflection) break;
  }
  return ctx;
}

std::map<NodeId, Route> MemoryStore::finalize_route(NodeId root) {
  const TaskNode& r = node(root);
  if (r.status != TaskStatus::Success)
    throw MemoryError(MemoryErrc::RootNotComplete, "root " + to_string(root) + " is not complete");

  // step_index of every successful action node, keyed by node
  std::map<NodeId, int> successful;
  for (NodeId a : execution_order(r.episode))
    if (node(a).action->success) successful.emplace(a, node(a).action->step_index);

  std::map<NodeId, Route> routes;
  std::vector<NodeId> stack{root};
  while (!stack.empty()) {
    NodeId cur = stack.back();
    stack.pop_back();
    const TaskNode& c = node(cur);
    for (NodeId ch : c.children) stack.push_back(ch);
    if (c.children.empty() && cur != root) continue;

    std::vector<std::pair<int, NodeId>> found;
    std::vector<NodeId> sub{cur};
    while (!sub.empty()) {
      NodeId s = sub.back();
      sub.pop_back();
      if (auto it = successful.find(s); it != successful.end()) found.emplace_back(it->second, s);
      for (NodeId ch : node(s).children) sub.push_back(ch);
    }
    std::sort(found.begin(), found.end());
    Route route{cur, {}};
    for (auto& f : found) route.actions.push_back(f.second);
    routes.emplace(cur, std::move(route));
  }

  for (const auto& [id, route] : routes) {
    if (route.actions.empty()) continue;
    std::string content = "route for '" + node(id).goal + "':";
    for (NodeId a : route.actions) content += " " + format_action(node(a).action->action) + ";";
    add_entry(Corpus::RouteHistory, node(id).goal, content, id);
  }
  return routes;
}

void MemoryStore::upsert_app_entry(AppMemoryEntry entry) {
  std::string content = "app " + entry.app_id + ": " + entry.description;
  auto it = std::find_if(apps_.begin(), apps_.end(), [&](const AppMemoryEntry& a) { return a.app_id == entry.app_id; });
  if (it != apps_.end()) {
    for (auto& e : entries_) {
      if (e.corpus == Corpus::App && e.tag == entry.app_id) {
        e.key_text = entry.description;
        e.content = content;
        e.key = embed(entry.description);
      }
    }
    *it = std::move(entry);
    return;
  }
  MemoryEntry m;
  m.corpus = Corpus::App;
  m.key_text = entry.description;
  m.content = content;
  m.key = embed(entry.description);
  m.tag = entry.app_id;
  m.seq = next_seq_++;
  entries_.push_back(std::move(m));
  apps_.push_back(std::move(entry));
}

void MemoryStore::append_page_note(const std::string& screen_key, std::string note) {
  auto it = std::find_if(pages_.begin(), pages_.end(),
                         [&](const PageMemoryEntry& p) { return p.screen_key == screen_key; });
  if (it == pages_.end()) {
    pages_.push_back({screen_key, {}});
    it = pages_.end() - 1;
  }
  add_entry(Corpus::Page, note, "page note: " + note);
  it->notes.push_back(std::move(note));
}

const PageMemoryEntry* MemoryStore::page(const std::string& screen_key) const {
  for (const auto& p : pages_)
    if (p.screen_key == screen_key) return &p;
  return nullptr;
}

void MemoryStore::append_action_memory(ActionMemoryItem item) { action_memory_.push_back(std::move(item)); }

void MemoryStore::append_user_memory(UserMemoryEntry entry) {
  add_entry(Corpus::User, entry.text, "user: " + entry.text);
  users_.push_back(std::move(entry));
}

// ---------------------------------------------------------------------------
// retrieval

void MemoryStore::check_key(const MemoryKey& key) const {
  if (key.values.size() != embedder_->dimension())
    throw MemoryError(MemoryErrc::DimensionMismatch, "key dimension " + std::to_string(key.values.size()) +
                                                         " does not match store dimension " +
                                                         std::to_string(embedder_->dimension()));
}

const MemoryEntry& MemoryStore::add_entry(Corpus corpus, std::string key_text, std::string content,
                                          std::optional<NodeId> origin) {
  MemoryEntry e;
  e.corpus = corpus;
  e.key = embed(key_text);
  e.key_text = std::move(key_text);
  e.content = std::move(content);
  e.origin = origin;
  e.seq = next_seq_++;
  entries_.push_back(std::move(e));
  return entries_.back();
}

namespace {
std::vector<Retrieved> top_k(std::vector<Retrieved> scored, std::size_t k) {
  std::stable_sort(scored.begin(), scored.end(), [](const Retrieved& a, const Retrieved& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.entry.seq < b.entry.seq;
  });
  if (scored.size() > k) scored.resize(k);
  return scored;
}
}  // namespace

std::vector<Retrieved> MemoryStore::retrieve_content(std::string_view query, std::string_view corpus,
                                                     std::size_t k) const {
  auto c = corpus_from_name(corpus);
  if (!c) throw MemoryError(MemoryErrc::UnknownCorpus, "unknown corpus '" + std::string(corpus) + "'");
  return retrieve_content(query, *c, k);
}

std::vector<Retrieved> MemoryStore::retrieve_content(std::string_view query, Corpus corpus, std::size_t k) const {
  MemoryKey q = embed(query);
  std::vector<Retrieved> scored;
  for (const auto& e : entries_)
    if (e.corpus == corpus) scored.push_back({e, cosine(q, e.key)});
  return top_k(std::move(scored), k);
}

std::vector<Retrieved> MemoryStore::retrieve_weighted(std::string_view query, NodeId node_id, RetrievalWeights w,
                                                      std::size_t k, std::span<const Corpus> corpora) const {
  if (w.relation < 0 || w.content < 0 || (w.relation == 0 && w.content == 0))
    throw std::invalid_argument("retrieval weights must be non-negative and not both zero");
  (void)node(node_id);
  MemoryKey q = embed(query);
  std::vector<Retrieved> scored;
  for (const auto& e : entries_) {
    if (std::find(corpora.begin(), corpora.end(), e.corpus) == corpora.end()) continue;
    double score = w.content * cosine(q, e.key);
    if (e.origin && contains(*e.origin)) {
      if (auto d = tree_distance(node_id, *e.origin)) score += w.relation * (1.0 / (1.0 + *d));
    }
    scored.push_back({e, score});
  }
  return top_k(std::move(scored), k);
}

std::vector<std::string> relational_snippets(const RelationalContext& ctx) {
  std::vector<std::string> out;
  if (ctx.parent_goal) out.push_back("parent goal: " + *ctx.parent_goal);
  if (ctx.last_success)
    out.push_back("last success: " + format_action(ctx.last_success->action->action) + " for '" +
                  ctx.last_success->goal + "'");
  if (ctx.last_failure_with_reflection) {
    const auto& f = *ctx.last_failure_with_reflection;
    out.push_back("last failure: " + format_action(f.action->action) + " for '" + f.goal +
                  "'; reflection: " + *f.action->reflection);
  }
  return out;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

MemoryKey key_from_json(const nlohmann::json& j) {
  MemoryKey k;
  for (const auto& v : j) k.values.push_back(v.get<double>());
  return k;
}

}  // namespace

void MemoryStore::warm_start(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw MemoryError(MemoryErrc::FileFormat, "cannot open " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw MemoryError(MemoryErrc::FileFormat, file.string() + ": " + e.what());
  }
  warm_start(doc);
}

void MemoryStore::warm_start(const nlohmann::json& doc) {
  if (!doc.is_object()) throw MemoryError(MemoryErrc::FileFormat, "warm-start document must be an object");
  if (doc.empty()) return;
  if (doc.value("schema_version", kSchemaVersion) != kSchemaVersion)
    throw MemoryError(MemoryErrc::FileFormat, "unsupported schema_version");

  // stage everything first so a malformed file leaves the store unchanged
  MemoryStore staged(embedder_);
  staged.entries_ = entries_;
  staged.next_seq_ = next_seq_;
  staged.apps_ = apps_;
  staged.pages_ = pages_;
  staged.users_ = users_;
  try {
    auto add_pre = [&](Corpus c, const nlohmann::json& e, const std::string& key_text, const std::string& content) {
      if (e.contains("key")) {
        MemoryKey key = key_from_json(e.at("key"));
        check_key(key);
        MemoryEntry m;
        m.corpus = c;
        m.key_text = key_text;
        m.content = content;
        m.key = std::move(key);
        m.seq = staged.next_seq_++;
        staged.entries_.push_back(std::move(m));
      } else {
        staged.add_entry(c, key_text, content);
      }
    };
    for (const auto& e : doc.value("task_history", nlohmann::json::array()))
      add_pre(Corpus::TaskHistory, e, e.at("goal").get<std::string>(), e.at("content").get<std::string>());
    for (const auto& e : doc.value("route_history", nlohmann::json::array()))
      add_pre(Corpus::RouteHistory, e, e.at("goal").get<std::string>(), e.at("content").get<std::string>());
    std::vector<std::string> seen_apps;
    for (const auto& e : doc.value("app", nlohmann::json::array())) {
      AppMemoryEntry a;
      a.app_id = e.at("app_id").get<std::string>();
      a.description = e.at("description").get<std::string>();
      if (std::find(seen_apps.begin(), seen_apps.end(), a.app_id) != seen_apps.end())
        throw MemoryError(MemoryErrc::DuplicateId, "duplicate app_id " + a.app_id + " in warm-start file");
      seen_apps.push_back(a.app_id);
      if (e.contains("page_notes")) a.page_notes = e.at("page_notes").get<std::map<std::string, std::string>>();
      staged.upsert_app_entry(std::move(a));
    }
    for (const auto& e : doc.value("page", nlohmann::json::array()))
      for (const auto& note : e.at("notes")) staged.append_page_note(e.at("screen_key").get<std::string>(), note);
    for (const auto& e : doc.value("user", nlohmann::json::array()))
      staged.append_user_memory({e.at("text").get<std::string>(), e.value("timestamp", std::int64_t{0})});
  } catch (const nlohmann::json::exception& e) {
    throw MemoryError(MemoryErrc::FileFormat, std::string("warm-start: ") + e.what());
  }
  entries_ = std::move(staged.entries_);
  next_seq_ = staged.next_seq_;
  apps_ = std::move(staged.apps_);
  pages_ = std::move(staged.pages_);
  users_ = std::move(staged.users_);
}

nlohmann::ordered_json MemoryStore::to_json() const {
  nlohmann::ordered_json j;
  j["schema_version"] = kSchemaVersion;
  auto section = [&](Corpus c) {
    auto arr = nlohmann::ordered_json::array();
    for (const auto& e : entries_) {
      if (e.corpus != c) continue;
      nlohmann::ordered_json x;
      x["goal"] = e.key_text;
      x["content"] = e.content;
      x["key"] = e.key.values;
      arr.push_back(std::move(x));
    }
    return arr;
  };
  j["task_history"] = section(Corpus::TaskHistory);
  j["route_history"] = section(Corpus::RouteHistory);
  auto apps = nlohmann::ordered_json::array();
  for (const auto& a : apps_) {
    nlohmann::ordered_json x;
    x["app_id"] = a.app_id;
    x["description"] = a.description;
    x["page_notes"] = a.page_notes;
    apps.push_back(std::move(x));
  }
  j["app"] = std::move(apps);
  auto pages = nlohmann::ordered_json::array();
  for (const auto& p : pages_) pages.push_back({{"screen_key", p.screen_key}, {"notes", p.notes}});
  j["page"] = std::move(pages);
  auto users = nlohmann::ordered_json::array();
  for (const auto& u : users_) users.push_back({{"text", u.text}, {"timestamp", u.timestamp}});
  j["user"] = std::move(users);
  return j;
}

void MemoryStore::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw MemoryError(MemoryErrc::FileFormat, "cannot write " + file.string());
  out << to_json().dump(2) << "\n";
}

}  // namespace moba
