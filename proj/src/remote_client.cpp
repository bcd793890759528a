#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "moba/decision.hpp"

namespace moba {

namespace {

std::string file_stem(Role role) {
  switch (role) {
    case Role::Plan: return "plan";
    case Role::PlanReflect: return "plan_reflect";
    case Role::Act: return "act";
    case Role::ExecReflect: return "exec_reflect";
  }
  return "act";
}

std::string join_lines(const std::vector<std::string>& items) {
  if (items.empty()) return "(none)";
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += '\n';
    out += "- " + s;
  }
  return out;
}

void replace_all(std::string& s, std::string_view key, const std::string& value) {
  std::size_t pos = 0;
  while ((pos = s.find(key, pos)) != std::string::npos) {
    s.replace(pos, key.size(), value);
    pos += value.size();
  }
}

const char* kSystemPrompt =
    "You operate an Android phone through a fixed action vocabulary. "
    "Answer with exactly one JSON object and nothing else.";

}  // namespace

RemoteConfig RemoteConfig::from_env() {
  RemoteConfig c;
  if (const char* v = std::getenv("MOBA_BASE_URL")) c.base_url = v;
  if (const char* v = std::getenv("MOBA_MODEL")) c.model = v;
  if (const char* v = std::getenv("MOBA_PROMPT_DIR")) c.prompt_dir = v;
  return c;
}

std::optional<std::string> extract_first_json_object(std::string_view text) {
  for (std::size_t start = text.find('{'); start != std::string_view::npos; start = text.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (std::size_t i = start; i < text.size(); ++i) {
      const char c = text[i];
      if (in_string) {
        if (escaped)
          escaped = false;
        else if (c == '\\')
          escaped = true;
        else if (c == '"')
          in_string = false;
        continue;
      }
      if (c == '"') {
        in_string = true;
      } else if (c == '{') {
        ++depth;
      } else if (c == '}' && --depth == 0) {
        std::string candidate(text.substr(start, i - start + 1));
        if (nlohmann::json::accept(candidate)) return candidate;
        break;
      }
    }
  }
  return std::nullopt;
}

std::string default_prompt_template(Role role) {
  switch (role) {
    case Role::Plan:
      return "Goal: {goal}\n\nCurrent screen:\n{observation}\n\nRelevant memory:\n{memory}\n\n"
             "Split the goal into an ordered list of smaller sub-goals. "
             "Reply as {\"subgoals\": [\"...\", ...]}.";
    case Role::PlanReflect:
      return "Goal: {goal}\n\nCurrent screen:\n{observation}\n\nRelevant memory:\n{memory}\n\n"
             "Can this goal be carried out directly on the current screen? "
             "Reply as {\"can_do\": true|false, \"reflection\": \"...\"}.";
    case Role::Act:
      return "Goal: {goal}\n\nCurrent screen:\n{observation}\n\nRelevant memory:\n{memory}\n\n"
             "Available actions:\n{actions}\n\n"
             "If one action completes the goal, reply as {\"can_complete\": true, \"action\": \"Click(3)\", "
             "\"observation\": \"...\", \"thought\": \"...\", \"message\": \"...\", \"extracted_info\": {}}. "
             "Otherwise reply with can_complete false and no action.";
    case Role::ExecReflect:
      return "Goal: {goal}\n\nScreen before:\n{observation}\n\nAction taken: {prior_action}\n\n"
             "Screen after:\n{post_observation}\n\nRelevant memory:\n{memory}\n\n"
             "Reply as {\"subgoal_status\": true|false, \"goal_status\": true|false, \"reflection\": \"...\"}.";
  }
  return "{goal}";
}

std::string render_prompt(std::string_view tmpl, const DecisionRequest& req) {
  std::string out(tmpl);
  // {memory} and {actions} go last so snippet text cannot inject the other placeholders.
  replace_all(out, "{goal}", req.goal);
  replace_all(out, "{observation}", req.observation);
  replace_all(out, "{post_observation}", req.post_observation.value_or(""));
  replace_all(out, "{prior_action}", req.prior_action.value_or(""));
  replace_all(out, "{actions}", join_lines(req.action_catalog));
  replace_all(out, "{memory}", join_lines(req.retrieved_memory));
  return out;
}

RemoteClient::RemoteClient(RemoteConfig config) : config_(std::move(config)) {
  for (Role r : {Role::Plan, Role::PlanReflect, Role::Act, Role::ExecReflect}) {
    std::ifstream in(config_.prompt_dir / (file_stem(r) + ".txt"));
    if (in) {
      std::stringstream buf;
      buf << in.rdbuf();
      templates_[r] = buf.str();
    }
  }
}

std::string RemoteClient::template_for(Role role) const {
  auto it = templates_.find(role);
  return it != templates_.end() ? it->second : default_prompt_template(role);
}

nlohmann::json RemoteClient::build_body(const DecisionRequest& req) const {
  nlohmann::json body;
  body["model"] = config_.model;
  body["messages"] = nlohmann::json::array({
      {{"role", "system"}, {"content", kSystemPrompt}},
      {{"role", "user"}, {"content", render_prompt(template_for(req.role), req)}},
  });
  return body;
}

DecisionResponse RemoteClient::decide(const DecisionRequest& req) {
  req.validate();
  const std::string body = build_body(req).dump();
  httplib::Headers headers;
  if (const char* token = std::getenv(config_.token_env.c_str()); token && *token) {
    const bool bearer = config_.auth_header == "Authorization";
    headers.emplace(config_.auth_header, bearer ? std::string("Bearer ") + token : std::string(token));
  }

  const auto timeout_us = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout).count();
  std::string last_error = "no attempt made";
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    if (attempt > 1) {
      const double factor = std::pow(config_.backoff_factor, attempt - 2);
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(config_.base_delay.count() * factor));
    }
    httplib::Client cli(config_.base_url);
    cli.set_connection_timeout(timeout_us / 1000000, timeout_us % 1000000);
    cli.set_read_timeout(timeout_us / 1000000, timeout_us % 1000000);
    cli.set_write_timeout(timeout_us / 1000000, timeout_us % 1000000);

    const auto started = std::chrono::steady_clock::now();
    ++requests_;
    auto res = cli.Post(config_.path, headers, body, "application/json");
    const auto elapsed = std::chrono::steady_clock::now() - started;

    if (!res) {
      const auto err = res.error();
      if (err == httplib::Error::ConnectionTimeout ||
          (err == httplib::Error::Read && elapsed >= config_.timeout * 9 / 10))
        throw DecisionError(DecisionErrc::Timeout, "backend did not answer within " +
                                                       std::to_string(config_.timeout.count()) + " ms");
      last_error = "transport error: " + httplib::to_string(err);
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      throw DecisionError(DecisionErrc::BackendUnavailable, "backend rejected request: HTTP " +
                                                                std::to_string(res->status));

    nlohmann::json envelope;
    try {
      envelope = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      throw DecisionError(DecisionErrc::SchemaViolation, "response body is not JSON");
    }
    const nlohmann::json* content = nullptr;
    if (envelope.contains("choices") && envelope["choices"].is_array() && !envelope["choices"].empty()) {
      const auto& msg = envelope["choices"][0].value("message", nlohmann::json::object());
      if (msg.contains("content") && msg["content"].is_string()) content = &envelope["choices"][0]["message"]["content"];
    }
    if (!content) throw DecisionError(DecisionErrc::SchemaViolation, "missing choices[0].message.content");
    auto object = extract_first_json_object(content->get_ref<const std::string&>());
    if (!object) throw DecisionError(DecisionErrc::SchemaViolation, "reply contains no JSON object");
    return parse_response(req.role, nlohmann::json::parse(*object));
  }
  throw DecisionError(DecisionErrc::BackendUnavailable,
                      "retry budget of " + std::to_string(config_.max_attempts) + " exhausted (" + last_error + ")");
}

}  // namespace moba
