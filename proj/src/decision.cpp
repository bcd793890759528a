#include "moba/decision.hpp"

#include <fnmatch.h>

#include <fstream>
#include <sstream>

namespace moba {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string_view to_string(Role r) {
  switch (r) {
    case Role::Plan: return "Plan";
    case Role::PlanReflect: return "PlanReflect";
    case Role::Act: return "Act";
    case Role::ExecReflect: return "ExecReflect";
  }
  return "?";
}

std::optional<Role> role_from_name(std::string_view name) {
  for (Role r : {Role::Plan, Role::PlanReflect, Role::Act, Role::ExecReflect})
    if (to_string(r) == name) return r;
  return std::nullopt;
}

std::string_view to_string(DecisionErrc e) {
  switch (e) {
    case DecisionErrc::SchemaViolation: return "SchemaViolation";
    case DecisionErrc::BackendUnavailable: return "BackendUnavailable";
    case DecisionErrc::Timeout: return "Timeout";
    case DecisionErrc::NoMatchingRule: return "NoMatchingRule";
    case DecisionErrc::FileFormat: return "FileFormatError";
  }
  return "?";
}

void DecisionRequest::validate() const {
  const bool exec = role == Role::ExecReflect;
  if (exec != post_observation.has_value())
    throw std::invalid_argument("post_observation must be present exactly for ExecReflect requests");
  if (!exec && prior_action) throw std::invalid_argument("prior_action is only valid for ExecReflect requests");
}

ojson DecisionRequest::to_json() const {
  ojson j;
  j["role"] = std::string(to_string(role));
  j["goal"] = goal;
  j["observation"] = observation;
  if (post_observation) j["post_observation"] = *post_observation;
  j["retrieved_memory"] = retrieved_memory;
  j["action_catalog"] = action_catalog;
  if (prior_action) j["prior_action"] = *prior_action;
  return j;
}

namespace {

[[noreturn]] void violation(Role role, const std::string& what) {
  throw DecisionError(DecisionErrc::SchemaViolation, std::string(to_string(role)) + " response: " + what);
}

const json& field(Role role, const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) violation(role, std::string("missing '") + key + "'");
  return *it;
}

bool req_bool(Role role, const json& j, const char* key) {
  const json& v = field(role, j, key);
  if (!v.is_boolean()) violation(role, std::string("'") + key + "' must be a boolean");
  return v.get<bool>();
}

std::string req_string(Role role, const json& j, const char* key) {
  const json& v = field(role, j, key);
  if (!v.is_string()) violation(role, std::string("'") + key + "' must be a string");
  return v.get<std::string>();
}

std::optional<std::string> opt_string(Role role, const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) violation(role, std::string("'") + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace

DecisionResponse parse_response(Role role, const json& j) {
  if (!j.is_object()) violation(role, "payload must be a JSON object");
  switch (role) {
    case Role::Plan: {
      const json& s = field(role, j, "subgoals");
      if (!s.is_array() || s.empty()) violation(role, "'subgoals' must be a non-empty array");
      PlanResponse r;
      for (const auto& g : s) {
        if (!g.is_string() || g.get<std::string>().empty()) violation(role, "every subgoal must be a non-empty string");
        r.subgoals.push_back(g.get<std::string>());
      }
      return r;
    }
    case Role::PlanReflect: {
      PlanReflectResponse r;
      r.can_do = req_bool(role, j, "can_do");
      r.reflection = req_string(role, j, "reflection");
      return r;
    }
    case Role::Act: {
      ActResponse r;
      r.can_complete = req_bool(role, j, "can_complete");
      r.action_text = opt_string(role, j, "action");
      r.observation = req_string(role, j, "observation");
      r.thought = req_string(role, j, "thought");
      r.message = opt_string(role, j, "message");
      if (r.can_complete != r.action_text.has_value())
        violation(role, "'action' is required exactly when 'can_complete' is true");
      if (r.action_text) {
        try {
          r.action = parse_action_call(*r.action_text);
        } catch (const ActionParseError& e) {
          violation(role, "unparseable action '" + *r.action_text + "': " + e.what());
        }
      }
      if (auto it = j.find("extracted_info"); it != j.end() && !it->is_null()) {
        if (!it->is_object()) violation(role, "'extracted_info' must be an object of strings");
        for (const auto& [k, v] : it->items()) {
          if (!v.is_string()) violation(role, "'extracted_info." + k + "' must be a string");
          r.extracted_info[k] = v.get<std::string>();
        }
      }
      return r;
    }
    case Role::ExecReflect: {
      ExecReflectResponse r;
      r.subgoal_status = req_bool(role, j, "subgoal_status");
      r.goal_status = req_bool(role, j, "goal_status");
      r.reflection = opt_string(role, j, "reflection");
      return r;
    }
  }
  violation(role, "unknown role");
}

bool glob_match(std::string_view pattern, std::string_view text) {
  return ::fnmatch(std::string(pattern).c_str(), std::string(text).c_str(), 0) == 0;
}

// ---------------------------------------------------------------------------

namespace {

bool same_matcher(const OracleRule& a, const OracleRule& b) {
  return a.role == b.role && a.screen_glob == b.screen_glob && a.goal_glob == b.goal_glob &&
         a.post_screen_glob == b.post_screen_glob && a.action_glob == b.action_glob && a.memory_glob == b.memory_glob;
}

[[noreturn]] void format_error(std::size_t i, const std::string& what) {
  throw DecisionError(DecisionErrc::FileFormat, "rule " + std::to_string(i) + ": " + what);
}

std::optional<std::string> opt_glob(const json& r, const char* key, std::size_t i) {
  auto it = r.find(key);
  if (it == r.end()) return std::nullopt;
  if (!it->is_string()) format_error(i, std::string("'") + key + "' must be a string");
  return it->get<std::string>();
}

}  // namespace

ScriptedOracle::ScriptedOracle(std::vector<OracleRule> rules) : rules_(std::move(rules)) {
  for (std::size_t j = 0; j < rules_.size(); ++j)
    for (std::size_t i = 0; i < j; ++i)
      if (!rules_[i].max_uses && same_matcher(rules_[i], rules_[j])) {
        warnings_.push_back("DuplicateUnreachableRule: rule " + std::to_string(j) + " is shadowed by rule " +
                            std::to_string(i));
        break;
      }
}

ScriptedOracle ScriptedOracle::from_json(const json& doc) {
  const json* list = &doc;
  if (doc.is_object() && doc.contains("rules")) list = &doc.at("rules");
  if (!list->is_array()) throw DecisionError(DecisionErrc::FileFormat, "oracle script must be a JSON list of rules");
  std::vector<OracleRule> rules;
  for (std::size_t i = 0; i < list->size(); ++i) {
    const json& r = (*list)[i];
    if (!r.is_object()) format_error(i, "rule must be an object");
    OracleRule rule;
    auto role = r.find("role");
    if (role == r.end() || !role->is_string()) format_error(i, "missing 'role'");
    auto parsed = role_from_name(role->get<std::string>());
    if (!parsed) format_error(i, "unknown role '" + role->get<std::string>() + "'");
    rule.role = *parsed;
    rule.screen_glob = opt_glob(r, "screen_glob", i).value_or("*");
    rule.goal_glob = opt_glob(r, "goal_glob", i).value_or("*");
    rule.post_screen_glob = opt_glob(r, "post_screen_glob", i);
    rule.action_glob = opt_glob(r, "action_glob", i);
    rule.memory_glob = opt_glob(r, "memory_glob", i);
    auto resp = r.find("response");
    if (resp == r.end() || !resp->is_object()) format_error(i, "'response' must be an object");
    rule.response = *resp;
    if (auto mu = r.find("max_uses"); mu != r.end() && !mu->is_null()) {
      if (!mu->is_number_integer() || mu->get<int>() < 1) format_error(i, "'max_uses' must be a positive integer");
      rule.max_uses = mu->get<int>();
    }
    rules.push_back(std::move(rule));
  }
  return ScriptedOracle(std::move(rules));
}

ScriptedOracle ScriptedOracle::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DecisionError(DecisionErrc::FileFormat, "cannot open oracle script " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return ScriptedOracle{};
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw DecisionError(DecisionErrc::FileFormat, file.string() + ": " + e.what());
  }
  return from_json(doc);
}

DecisionResponse ScriptedOracle::decide(const DecisionRequest& req) {
  ++calls_;
  for (auto& rule : rules_) {
    if (rule.role != req.role) continue;
    if (rule.max_uses && rule.uses >= *rule.max_uses) continue;
    if (!glob_match(rule.screen_glob, req.screen_name) || !glob_match(rule.goal_glob, req.goal)) continue;
    if (rule.post_screen_glob && !glob_match(*rule.post_screen_glob, req.post_screen_name.value_or(""))) continue;
    if (rule.action_glob && !glob_match(*rule.action_glob, req.prior_action.value_or(""))) continue;
    if (rule.memory_glob &&
        std::none_of(req.retrieved_memory.begin(), req.retrieved_memory.end(),
                     [&](const std::string& m) { return glob_match(*rule.memory_glob, m); }))
      continue;
    ++rule.uses;
    return parse_response(req.role, rule.response);
  }
  throw DecisionError(DecisionErrc::NoMatchingRule, std::string("no rule for ") + std::string(to_string(req.role)) +
                                                        " on screen '" + req.screen_name + "' goal '" + req.goal +
                                                        "'");
}

}  // namespace moba
