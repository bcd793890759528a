#pragma once

#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "moba/decision.hpp"
#include "moba/event_log.hpp"
#include "moba/memory.hpp"
#include "moba/sim_device.hpp"

namespace moba {

struct Budgets {
  int max_steps = 40;
  int max_depth = 4;
  int max_plan_calls = 10;
  int loop_limit = 3;  // attempts of one (goal, screen) pair before giving up
};

Budgets budgets_from_json(const nlohmann::json& j, Budgets base = {});

struct AgentConfig {
  Budgets budgets;
  bool use_memory = true;
  bool use_plan = true;
  RetrievalWeights weights;
  std::size_t top_k = 5;
};

/// Everything one episode owns.
struct EpisodeContext {
  sim::SimDevice& env;
  MemoryStore& memory;
  DecisionBackend& backend;
  AgentConfig config;
  EventLog* log = nullptr;

  void emit(std::optional<NodeId> node, std::string_view phase, nlohmann::ordered_json payload) const;
};

class PlanBudgetExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Picks the installed app whose App Memory description is most similar to `description`.
std::string select_app(std::string_view description, const MemoryStore& memory);

struct ExecOutcome {
  enum class Kind { Executed, NeedsDecomposition, Unrecoverable } kind = Kind::NeedsDecomposition;
  std::optional<Action> action;
  ScreenObservation pre_obs;
  ScreenObservation post_obs;
  bool applied = false;    // the action reached the device
  bool action_ok = false;  // validated and applied without a device error
  std::string error;
  std::string thought;
};

class LocalAgent {
 public:
  explicit LocalAgent(const EpisodeContext& ctx) : ctx_(ctx) {}

  ExecOutcome exec_task(NodeId node);
  /// Snippets handed to the Act role (empty when memory is disabled).
  std::vector<std::string> act_memory(NodeId node, const ScreenObservation& screen) const;

 private:
  const EpisodeContext& ctx_;
};

enum class EpisodeStatus { Running, Complete, FailedBudget, FailedUnrecoverable };

std::string_view to_string(EpisodeStatus s);

/// The four adaptive-planning situations an episode can pass through.
enum class AdaptiveCase { PlanReflectionFailure, ExecReflectionFailure, Refinement, GoalComplete };

std::string_view to_string(AdaptiveCase c);

struct NodeOutcome {
  NodeId id;
  std::string goal;
  int depth = 0;
  TaskStatus status = TaskStatus::Pending;
};

struct EpisodeReport {
  EpisodeStatus status = EpisodeStatus::Running;
  std::string reason;
  NodeId root;
  int steps_executed = 0;
  int plan_calls = 0;
  int iterations = 0;
  std::vector<NodeId> popped;
  std::vector<std::string> popped_goals;
  std::set<AdaptiveCase> cases;
  std::vector<NodeOutcome> nodes;

  nlohmann::ordered_json goal_tree(const MemoryStore& memory) const;
};

/// Runs one episode of the adaptive planning loop (or the flat loop when planning is disabled).
EpisodeReport run_episode(const std::string& goal, const EpisodeContext& ctx);

}  // namespace moba
