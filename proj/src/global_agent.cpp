#include <algorithm>
#include <array>
#include <functional>
#include <map>

#include "moba/agent.hpp"

namespace moba {

std::string_view to_string(EpisodeStatus s) {
  switch (s) {
    case EpisodeStatus::Running: return "running";
    case EpisodeStatus::Complete: return "complete";
    case EpisodeStatus::FailedBudget: return "failed_budget";
    case EpisodeStatus::FailedUnrecoverable: return "failed_unrecoverable";
  }
  return "?";
}

std::string_view to_string(AdaptiveCase c) {
  switch (c) {
    case AdaptiveCase::PlanReflectionFailure: return "plan_reflection_failure";
    case AdaptiveCase::ExecReflectionFailure: return "exec_reflection_failure";
    case AdaptiveCase::Refinement: return "refinement";
    case AdaptiveCase::GoalComplete: return "goal_complete";
  }
  return "?";
}

nlohmann::ordered_json EpisodeReport::goal_tree(const MemoryStore& memory) const {
  std::function<nlohmann::ordered_json(NodeId)> walk = [&](NodeId id) {
    const TaskNode& n = memory.node(id);
    nlohmann::ordered_json j;
    j["id"] = n.id.value;
    j["goal"] = n.goal;
    j["status"] = std::string(to_string(n.status));
    if (n.action) {
      j["action"] = format_action(n.action->action);
      j["success"] = n.action->success;
    }
    nlohmann::ordered_json kids = nlohmann::ordered_json::array();
    for (NodeId c : n.children) kids.push_back(walk(c));
    j["children"] = kids;
    return j;
  };
  if (!memory.contains(root)) return nullptr;
  return walk(root);
}

namespace {

class Engine {
 public:
  explicit Engine(const EpisodeContext& ctx) : ctx_(ctx), local_(ctx) {}

  EpisodeReport run(const std::string& goal) {
    start_step_ = ctx_.env.step();
    ctx_.memory.begin_episode();
    report_.root = ctx_.memory.insert_task_node(goal, std::nullopt);
    if (ctx_.config.use_plan)
      adaptive_loop();
    else
      flat_loop();
    finish();
    return report_;
  }

 private:
  int steps_used() const { return ctx_.env.step() - start_step_; }
  const Budgets& budgets() const { return ctx_.config.budgets; }

  std::vector<std::string> memory_or_empty(std::vector<std::string> items) const {
    if (!ctx_.config.use_memory) return {};
    return items;
  }

  std::vector<std::string> relational(NodeId node) const {
    return relational_snippets(ctx_.memory.retrieve_relational(node));
  }

  void memory_update(NodeId node) {
    ctx_.emit(node, "memory_update",
              {{"task_nodes", ctx_.memory.node_count()}, {"entries", ctx_.memory.entries().size()},
               {"action_memory", ctx_.memory.action_memory().size()}});
  }

  void fail_up(NodeId node) {
    std::optional<NodeId> cur = node;
    while (cur) {
      ctx_.memory.mark_status(*cur, TaskStatus::Failure);
      cur = ctx_.memory.node(*cur).parent;
    }
  }

  void succeed_up(NodeId node) {
    ctx_.memory.mark_status(node, TaskStatus::Success);
    std::optional<NodeId> p = ctx_.memory.node(node).parent;
    while (p) {
      const auto& kids = ctx_.memory.node(*p).children;
      const bool all = std::all_of(kids.begin(), kids.end(), [&](NodeId c) {
        return ctx_.memory.node(c).status == TaskStatus::Success;
      });
      if (!all) break;
      ctx_.memory.mark_status(*p, TaskStatus::Success);
      p = ctx_.memory.node(*p).parent;
    }
  }

  void stop(EpisodeStatus s, std::string reason) {
    report_.status = s;
    report_.reason = std::move(reason);
  }

  PlanReflectResponse reflect_plan(NodeId node, const ScreenObservation& screen) {
    DecisionRequest req;
    req.role = Role::PlanReflect;
    req.goal = ctx_.memory.node(node).goal;
    req.observation = screen.describe();
    std::vector<std::string> mem = relational(node);
    if (const PageMemoryEntry* page = ctx_.memory.page(screen.screen_key))
      for (const auto& n : page->notes) mem.push_back("page note: " + n);
    req.retrieved_memory = memory_or_empty(std::move(mem));
    req.screen_name = screen.screen_name;
    PlanReflectResponse r;
    try {
      r = std::get<PlanReflectResponse>(ctx_.backend.decide(req));
    } catch (const DecisionError& e) {
      r.can_do = false;
      r.reflection = e.code() == DecisionErrc::Timeout ? "backend timeout"
                                                       : "backend error: " + std::string(to_string(e.code()));
    }
    ctx_.memory.set_plan_reflection(node, r.reflection);
    ctx_.emit(node, "plan_reflect", {{"goal", req.goal}, {"can_do", r.can_do}, {"reflection", r.reflection}});
    return r;
  }

  ExecReflectResponse reflect_exec(NodeId node, const ExecOutcome& exec) {
    DecisionRequest req;
    req.role = Role::ExecReflect;
    req.goal = ctx_.memory.node(node).goal;
    req.observation = exec.pre_obs.describe();
    req.post_observation = exec.post_obs.describe();
    req.prior_action = format_action(*exec.action);
    if (!exec.error.empty()) *req.post_observation += "\naction error: " + exec.error;
    req.retrieved_memory = memory_or_empty(relational(node));
    req.screen_name = exec.pre_obs.screen_name;
    req.post_screen_name = exec.post_obs.screen_name;
    ExecReflectResponse r;
    try {
      r = std::get<ExecReflectResponse>(ctx_.backend.decide(req));
    } catch (const DecisionError& e) {
      r.subgoal_status = false;
      r.goal_status = false;
      r.reflection = e.code() == DecisionErrc::Timeout ? "backend timeout"
                                                       : "backend error: " + std::string(to_string(e.code()));
    }
    if (!r.subgoal_status) r.goal_status = false;
    ctx_.memory.set_action_success(node, r.subgoal_status);
    if (!r.subgoal_status) {
      const std::string reflection = r.reflection.value_or("sub-goal not achieved");
      ctx_.memory.append_reflection(node, reflection);
      ctx_.memory.append_page_note(exec.pre_obs.screen_key, reflection);
    }
    nlohmann::ordered_json payload{{"goal", req.goal},
                                   {"action", *req.prior_action},
                                   {"subgoal_status", r.subgoal_status},
                                   {"goal_status", r.goal_status}};
    if (r.reflection) payload["reflection"] = *r.reflection;
    ctx_.emit(node, "exec_reflect", std::move(payload));
    return r;
  }

  /// Returns the new children in order; throws PlanBudgetExhausted or DecisionError.
  std::vector<NodeId> plan_decompose(NodeId node, const ScreenObservation& screen, std::string_view trigger) {
    const TaskNode& n = ctx_.memory.node(node);
    if (n.depth >= budgets().max_depth)
      throw PlanBudgetExhausted("depth " + std::to_string(n.depth) + " reached max_depth");
    if (report_.plan_calls >= budgets().max_plan_calls)
      throw PlanBudgetExhausted("max_plan_calls " + std::to_string(budgets().max_plan_calls) + " used");
    ++report_.plan_calls;

    DecisionRequest req;
    req.role = Role::Plan;
    req.goal = n.goal;
    req.observation = screen.describe();
    std::vector<std::string> mem = relational(node);
    static constexpr std::array<Corpus, 2> kCorpora{Corpus::RouteHistory, Corpus::TaskHistory};
    for (const auto& r : ctx_.memory.retrieve_weighted(n.goal, node, ctx_.config.weights, ctx_.config.top_k * 2, kCorpora)) {
      if (r.entry.corpus == Corpus::TaskHistory && r.entry.content.rfind("failure:", 0) != 0) continue;
      if (std::find(mem.begin(), mem.end(), r.entry.content) == mem.end()) mem.push_back(r.entry.content);
    }
    if (n.plan_reflection) mem.push_back("plan reflection: " + *n.plan_reflection);
    req.retrieved_memory = memory_or_empty(std::move(mem));
    req.screen_name = screen.screen_name;

    const auto plan = std::get<PlanResponse>(ctx_.backend.decide(req));
    std::vector<NodeId> children;
    for (const auto& g : plan.subgoals) children.push_back(ctx_.memory.insert_task_node(g, node));
    if (children.size() == 1) report_.cases.insert(AdaptiveCase::Refinement);
    ctx_.emit(node, "plan", {{"goal", req.goal}, {"trigger", trigger}, {"subgoals", plan.subgoals}});
    return children;
  }

  void adaptive_loop() {
    std::vector<NodeId> stack{report_.root};
    std::map<std::pair<std::string, std::string>, int> attempts;
    while (!stack.empty() && report_.status == EpisodeStatus::Running) {
      ++report_.iterations;
      const NodeId cur = stack.back();
      stack.pop_back();
      report_.popped.push_back(cur);
      report_.popped_goals.push_back(ctx_.memory.node(cur).goal);
      ctx_.memory.mark_status(cur, TaskStatus::InProgress);
      iterate(cur, stack, attempts);
      memory_update(cur);
    }
  }

  void iterate(NodeId cur, std::vector<NodeId>& stack, std::map<std::pair<std::string, std::string>, int>& attempts) {
    if (steps_used() >= budgets().max_steps) {
      fail_up(cur);
      stop(EpisodeStatus::FailedBudget, "max_steps " + std::to_string(budgets().max_steps) + " reached");
      return;
    }
    const ScreenObservation screen = ctx_.env.observe_distilled();
    const std::string goal = ctx_.memory.node(cur).goal;
    if (++attempts[{goal, screen.screen_key}] >= budgets().loop_limit) {
      fail_up(cur);
      stop(EpisodeStatus::FailedUnrecoverable, "loop detected on '" + goal + "' at " + screen.screen_name);
      return;
    }

    bool complete = false;
    bool goal_done = false;
    std::string trigger;
    const PlanReflectResponse pr = reflect_plan(cur, screen);
    if (pr.can_do) {
      ExecOutcome exec = local_.exec_task(cur);
      switch (exec.kind) {
        case ExecOutcome::Kind::NeedsDecomposition:
          trigger = "needs_decomposition";
          break;
        case ExecOutcome::Kind::Unrecoverable:
          trigger = "action_failed";
          if (exec.action) ctx_.memory.set_action_success(cur, false);
          break;
        case ExecOutcome::Kind::Executed: {
          const ExecReflectResponse er = reflect_exec(cur, exec);
          complete = er.subgoal_status;
          goal_done = er.goal_status;
          if (!complete) {
            trigger = "exec_reflection";
            report_.cases.insert(AdaptiveCase::ExecReflectionFailure);
          }
          break;
        }
      }
    } else {
      trigger = "plan_reflection";
      report_.cases.insert(AdaptiveCase::PlanReflectionFailure);
    }

    if (complete) {
      succeed_up(cur);
      if (goal_done) {
        std::optional<NodeId> p = cur;
        while (p) {
          ctx_.memory.mark_status(*p, TaskStatus::Success);
          p = ctx_.memory.node(*p).parent;
        }
        stack.clear();
      }
      return;
    }

    const ScreenObservation now = ctx_.env.observe_distilled();
    try {
      std::vector<NodeId> children = plan_decompose(cur, now, trigger);
      for (auto it = children.rbegin(); it != children.rend(); ++it) stack.push_back(*it);
    } catch (const PlanBudgetExhausted& e) {
      fail_up(cur);
      stop(EpisodeStatus::FailedBudget, std::string("PlanBudgetExhausted: ") + e.what());
    } catch (const DecisionError& e) {
      fail_up(cur);
      ctx_.emit(cur, "plan", {{"goal", goal}, {"trigger", trigger}, {"error", std::string(to_string(e.code()))}});
      stop(EpisodeStatus::FailedUnrecoverable, std::string(to_string(e.code())) + ": " + e.what());
    }
  }

  void flat_loop() {
    const NodeId root = report_.root;
    const std::string goal = ctx_.memory.node(root).goal;
    ctx_.memory.mark_status(root, TaskStatus::InProgress);
    while (report_.status == EpisodeStatus::Running) {
      if (steps_used() >= budgets().max_steps) {
        fail_up(root);
        stop(EpisodeStatus::FailedBudget, "max_steps " + std::to_string(budgets().max_steps) + " reached");
        break;
      }
      ++report_.iterations;
      const NodeId attempt = ctx_.memory.insert_task_node(goal, root);
      report_.popped.push_back(attempt);
      report_.popped_goals.push_back(goal);
      ExecOutcome exec = local_.exec_task(attempt);
      if (exec.kind != ExecOutcome::Kind::Executed) {
        if (exec.action) ctx_.memory.set_action_success(attempt, false);
        ctx_.memory.mark_status(attempt, TaskStatus::Failure);
        fail_up(root);
        stop(EpisodeStatus::FailedUnrecoverable,
             exec.kind == ExecOutcome::Kind::NeedsDecomposition ? "goal needs decomposition but planning is disabled"
                                                                 : "action failed: " + exec.error);
      } else {
        const ExecReflectResponse er = reflect_exec(attempt, exec);
        ctx_.memory.mark_status(attempt, er.subgoal_status ? TaskStatus::Success : TaskStatus::Failure);
        if (er.goal_status) ctx_.memory.mark_status(root, TaskStatus::Success);
      }
      memory_update(attempt);
      if (ctx_.memory.node(root).status == TaskStatus::Success) break;
    }
  }

  void finish() {
    const TaskNode& root = ctx_.memory.node(report_.root);
    if (report_.status == EpisodeStatus::Running) {
      if (root.status == TaskStatus::Success) {
        report_.status = EpisodeStatus::Complete;
      } else {
        report_.status = EpisodeStatus::FailedUnrecoverable;
        report_.reason = "stack emptied without completing the goal";
      }
    }
    if (report_.status == EpisodeStatus::Complete) {
      report_.cases.insert(AdaptiveCase::GoalComplete);
      ctx_.memory.finalize_route(report_.root);
    }
    report_.steps_executed = steps_used();
    for (NodeId id : ctx_.memory.episode_nodes(ctx_.memory.node(report_.root).episode)) {
      const TaskNode& n = ctx_.memory.node(id);
      report_.nodes.push_back({n.id, n.goal, n.depth, n.status});
    }
  }

  const EpisodeContext& ctx_;
  LocalAgent local_;
  EpisodeReport report_;
  int start_step_ = 0;
};

}  // namespace

EpisodeReport run_episode(const std::string& goal, const EpisodeContext& ctx) { return Engine(ctx).run(goal); }

}  // namespace moba
