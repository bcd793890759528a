#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "moba/action.hpp"

namespace moba {

enum class Role { Plan, PlanReflect, Act, ExecReflect };

std::string_view to_string(Role r);
std::optional<Role> role_from_name(std::string_view name);

enum class DecisionErrc { SchemaViolation, BackendUnavailable, Timeout, NoMatchingRule, FileFormat };

std::string_view to_string(DecisionErrc e);

class DecisionError : public std::runtime_error {
 public:
  DecisionError(DecisionErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  DecisionErrc code() const noexcept { return code_; }

 private:
  DecisionErrc code_;
};

struct DecisionRequest {
  Role role = Role::Act;
  std::string goal;
  std::string observation;                       // serialized distilled screen
  std::optional<std::string> post_observation;   // ExecReflect only
  std::vector<std::string> retrieved_memory;
  std::vector<std::string> action_catalog;
  std::optional<std::string> prior_action;       // ExecReflect only
  // Screen names are not part of the model-facing payload; scripted rules match on them.
  std::string screen_name;
  std::optional<std::string> post_screen_name;

  /// Throws std::invalid_argument when the role-specific shape is violated.
  void validate() const;
  nlohmann::ordered_json to_json() const;
};

struct PlanResponse {
  std::vector<std::string> subgoals;
};

struct PlanReflectResponse {
  bool can_do = false;
  std::string reflection;
};

struct ActResponse {
  bool can_complete = false;
  std::optional<std::string> action_text;
  std::optional<Action> action;  // parsed form of action_text
  std::string observation;
  std::string thought;
  std::optional<std::string> message;
  std::map<std::string, std::string> extracted_info;
};

struct ExecReflectResponse {
  bool subgoal_status = false;
  bool goal_status = false;
  std::optional<std::string> reflection;
};

using DecisionResponse = std::variant<PlanResponse, PlanReflectResponse, ActResponse, ExecReflectResponse>;

/// Strict per-role validation of a backend JSON payload; throws SchemaViolation.
DecisionResponse parse_response(Role role, const nlohmann::json& payload);

class DecisionBackend {
 public:
  virtual ~DecisionBackend() = default;
  virtual DecisionResponse decide(const DecisionRequest& request) = 0;
};

// ---------------------------------------------------------------------------

struct OracleRule {
  Role role = Role::Act;
  std::string screen_glob = "*";
  std::string goal_glob = "*";
  std::optional<std::string> post_screen_glob;
  std::optional<std::string> action_glob;   // matched against prior_action
  std::optional<std::string> memory_glob;   // matched against any retrieved memory snippet
  nlohmann::json response;
  std::optional<int> max_uses;
  int uses = 0;
};

bool glob_match(std::string_view pattern, std::string_view text);

/// Deterministic rule table; first matching rule with uses left answers.
class ScriptedOracle final : public DecisionBackend {
 public:
  ScriptedOracle() = default;
  explicit ScriptedOracle(std::vector<OracleRule> rules);

  static ScriptedOracle load(const std::filesystem::path& script_file);
  static ScriptedOracle from_json(const nlohmann::json& doc);

  DecisionResponse decide(const DecisionRequest& request) override;

  const std::vector<OracleRule>& rules() const { return rules_; }
  /// DuplicateUnreachableRule diagnostics collected while loading.
  const std::vector<std::string>& warnings() const { return warnings_; }
  std::size_t calls() const { return calls_; }

 private:
  std::vector<OracleRule> rules_;
  std::vector<std::string> warnings_;
  std::size_t calls_ = 0;
};

// ---------------------------------------------------------------------------

struct RemoteConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-4o";
  std::string token_env = "MOBA_API_TOKEN";
  std::string auth_header = "Authorization";
  std::chrono::milliseconds timeout{30000};
  int max_attempts = 3;
  std::chrono::milliseconds base_delay{500};
  double backoff_factor = 2.0;
  std::filesystem::path prompt_dir = "prompts";

  /// Reads MOBA_BASE_URL, MOBA_MODEL and MOBA_PROMPT_DIR when set.
  static RemoteConfig from_env();
};

/// Returns the first balanced top-level JSON object in free text.
std::optional<std::string> extract_first_json_object(std::string_view text);

/// Fills {goal}, {observation}, {memory} and {actions} in a role template.
std::string render_prompt(std::string_view tmpl, const DecisionRequest& request);
std::string default_prompt_template(Role role);

class RemoteClient final : public DecisionBackend {
 public:
  explicit RemoteClient(RemoteConfig config);

  DecisionResponse decide(const DecisionRequest& request) override;

  nlohmann::json build_body(const DecisionRequest& request) const;
  int requests_sent() const { return requests_.load(); }
  const RemoteConfig& config() const { return config_; }

 private:
  std::string template_for(Role role) const;

  RemoteConfig config_;
  std::map<Role, std::string> templates_;
  std::atomic<int> requests_{0};
};

}  // namespace moba
