#include <algorithm>
#include <array>

#include "moba/agent.hpp"

namespace moba {

void EpisodeContext::emit(std::optional<NodeId> node, std::string_view phase, nlohmann::ordered_json payload) const {
  if (!log) return;
  nlohmann::ordered_json rec;
  rec["step"] = env.step();
  rec["node_id"] = node ? nlohmann::ordered_json(node->value) : nlohmann::ordered_json(nullptr);
  rec["phase"] = phase;
  rec["payload"] = std::move(payload);
  log->append(rec);
}

Budgets budgets_from_json(const nlohmann::json& j, Budgets b) {
  if (!j.is_object()) return b;
  b.max_steps = j.value("max_steps", b.max_steps);
  b.max_depth = j.value("max_depth", b.max_depth);
  b.max_plan_calls = j.value("max_plan_calls", b.max_plan_calls);
  b.loop_limit = j.value("loop_limit", b.loop_limit);
  return b;
}

std::string select_app(std::string_view description, const MemoryStore& memory) {
  const auto& apps = memory.apps();
  if (apps.empty()) throw MemoryError(MemoryErrc::NoAppsKnown, "App Memory is empty");
  const MemoryKey q = memory.embed(description);
  const AppMemoryEntry* best = nullptr;
  double best_score = 0.0;
  for (const auto& a : apps) {
    const double s = cosine(q, memory.embed(a.description));
    if (!best || s > best_score || (s == best_score && a.app_id < best->app_id)) {
      best = &a;
      best_score = s;
    }
  }
  return best->app_id;
}

namespace {

std::string action_memory_snippet(const ActionMemoryItem& item) {
  std::string s = "action memory: " + item.subgoal + " -> " + format_action(item.action);
  if (!item.extracted_info.empty()) {
    s += " [";
    bool first = true;
    for (const auto& [k, v] : item.extracted_info) {
      if (!first) s += ", ";
      s += k + "=" + v;
      first = false;
    }
    s += "]";
  }
  return s;
}

void push_unique(std::vector<std::string>& out, std::string s) {
  if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(std::move(s));
}

}  // namespace

std::vector<std::string> LocalAgent::act_memory(NodeId node, const ScreenObservation& screen) const {
  std::vector<std::string> out;
  if (!ctx_.config.use_memory) return out;
  const MemoryStore& mem = ctx_.memory;
  for (auto& s : relational_snippets(mem.retrieve_relational(node))) push_unique(out, std::move(s));
  static constexpr std::array<Corpus, 3> kCorpora{Corpus::TaskHistory, Corpus::Page, Corpus::User};
  for (const auto& r : mem.retrieve_weighted(mem.node(node).goal, node, ctx_.config.weights, ctx_.config.top_k, kCorpora))
    push_unique(out, r.entry.content);
  if (const PageMemoryEntry* page = mem.page(screen.screen_key))
    for (const auto& n : page->notes) push_unique(out, "page note: " + n);
  for (const auto& item : mem.action_memory()) push_unique(out, action_memory_snippet(item));
  return out;
}

ExecOutcome LocalAgent::exec_task(NodeId node) {
  ExecOutcome out;
  MemoryStore& mem = ctx_.memory;
  const std::string goal = mem.node(node).goal;
  out.pre_obs = ctx_.env.observe_distilled();
  out.post_obs = out.pre_obs;

  DecisionRequest req;
  req.role = Role::Act;
  req.goal = goal;
  req.observation = out.pre_obs.describe();
  req.retrieved_memory = act_memory(node, out.pre_obs);
  req.action_catalog = action_catalog();
  req.screen_name = out.pre_obs.screen_name;

  ActResponse resp;
  try {
    resp = std::get<ActResponse>(ctx_.backend.decide(req));
  } catch (const DecisionError& e) {
    out.kind = ExecOutcome::Kind::Unrecoverable;
    out.error = std::string(to_string(e.code())) + ": " + e.what();
    ctx_.emit(node, "act", {{"goal", goal}, {"error", out.error}});
    return out;
  }
  out.thought = resp.thought;

  if (!resp.can_complete) {
    mem.set_plan_reflection(node, resp.thought);
    out.kind = ExecOutcome::Kind::NeedsDecomposition;
    ctx_.emit(node, "act", {{"goal", goal}, {"can_complete", false}, {"thought", resp.thought}});
    return out;
  }

  const Action action = *resp.action;
  out.action = action;
  ActionRecord rec;
  rec.action = action;
  rec.observation = resp.observation;
  rec.thought = resp.thought;
  rec.response = resp.message;
  rec.screen_key = out.pre_obs.screen_key;

  const ValidationResult v = validate_action(action, out.pre_obs);
  if (!v.ok()) {
    rec.error = std::string(to_string(v.error)) + ": " + v.message;
    out.error = rec.error;
    out.kind = ExecOutcome::Kind::Executed;
  } else {
    sim::AppResolver resolver = [&mem](const std::string& description) -> std::optional<std::string> {
      try {
        return select_app(description, mem);
      } catch (const MemoryError&) {
        return std::nullopt;
      }
    };
    const sim::ActionOutcome applied = ctx_.env.apply(action, resolver);
    out.applied = true;
    rec.env_step = ctx_.env.step();
    if (applied.error) {
      rec.error = std::string(sim::to_string(*applied.error)) + ": " + applied.error_message;
      out.error = rec.error;
    }
    out.post_obs = ctx_.env.observe_distilled();
    out.action_ok = !applied.error;
    out.kind = std::holds_alternative<actions::Failed>(action) ? ExecOutcome::Kind::Unrecoverable
                                                                : ExecOutcome::Kind::Executed;
  }

  mem.append_action(node, rec);
  mem.append_action_memory(ActionMemoryItem{action, goal, resp.extracted_info});

  nlohmann::ordered_json payload;
  payload["goal"] = goal;
  payload["can_complete"] = true;
  payload["action"] = format_action(action);
  payload["thought"] = resp.thought;
  if (!resp.extracted_info.empty()) payload["extracted_info"] = resp.extracted_info;
  if (!out.error.empty()) payload["error"] = out.error;
  ctx_.emit(node, "act", std::move(payload));
  return out;
}

}  // namespace moba
