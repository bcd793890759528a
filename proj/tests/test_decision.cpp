#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "moba/decision.hpp"
#include "support/stub_server.hpp"

using namespace moba;
using moba::testing::StubServer;
using json = nlohmann::json;

namespace {

DecisionRequest request(Role role, std::string goal = "set alarm for 8 am", std::string screen = "clock:home") {
  DecisionRequest r;
  r.role = role;
  r.goal = std::move(goal);
  r.observation = "screen: " + screen;
  r.screen_name = std::move(screen);
  if (role == Role::ExecReflect) {
    r.post_observation = "after";
    r.prior_action = "Click(0)";
  }
  return r;
}

OracleRule rule(Role role, std::string goal, json resp, std::optional<int> max_uses = std::nullopt) {
  OracleRule r;
  r.role = role;
  r.goal_glob = std::move(goal);
  r.response = std::move(resp);
  r.max_uses = max_uses;
  return r;
}

DecisionErrc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const DecisionError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no DecisionError thrown";
  return DecisionErrc::FileFormat;
}

}  // namespace

TEST(Request, RoleShape) {
  EXPECT_NO_THROW(request(Role::ExecReflect).validate());
  DecisionRequest r = request(Role::ExecReflect);
  r.post_observation.reset();
  EXPECT_THROW(r.validate(), std::invalid_argument);
  DecisionRequest a = request(Role::Act);
  a.post_observation = "x";
  EXPECT_THROW(a.validate(), std::invalid_argument);
  const auto j = request(Role::Plan).to_json();
  EXPECT_EQ(j["role"], "Plan");
  EXPECT_FALSE(j.contains("post_observation"));
}

TEST(ParseResponse, PerRoleSchemas) {
  const auto plan = std::get<PlanResponse>(parse_response(Role::Plan, {{"subgoals", {"a", "b"}}}));
  EXPECT_EQ(plan.subgoals, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(code_of([] { parse_response(Role::Plan, {{"subgoals", json::array()}}); }), DecisionErrc::SchemaViolation);
  EXPECT_EQ(code_of([] { parse_response(Role::Plan, {{"subgoals", {"a", ""}}}); }), DecisionErrc::SchemaViolation);

  EXPECT_EQ(code_of([] { parse_response(Role::PlanReflect, {{"can_do", "yes"}, {"reflection", ""}}); }),
            DecisionErrc::SchemaViolation);
  const auto pr = std::get<PlanReflectResponse>(parse_response(Role::PlanReflect, {{"can_do", true}, {"reflection", "ok"}}));
  EXPECT_TRUE(pr.can_do);

  const auto act = std::get<ActResponse>(parse_response(
      Role::Act, {{"can_complete", true},
                  {"action", "Box_Input(3, \"G104\")"},
                  {"observation", "o"},
                  {"thought", "t"},
                  {"extracted_info", {{"city", "Hangzhou"}}}}));
  EXPECT_EQ(*act.action, Action(actions::BoxInput{3, "G104"}));
  EXPECT_EQ(act.extracted_info.at("city"), "Hangzhou");
  // can_complete true without an action, or with an unparseable one
  EXPECT_EQ(code_of([] { parse_response(Role::Act, {{"can_complete", true}, {"observation", ""}, {"thought", ""}}); }),
            DecisionErrc::SchemaViolation);
  EXPECT_EQ(code_of([] {
              parse_response(Role::Act,
                             {{"can_complete", true}, {"action", "Teleport(1)"}, {"observation", ""}, {"thought", ""}});
            }),
            DecisionErrc::SchemaViolation);
  EXPECT_EQ(code_of([] {
              parse_response(Role::Act,
                             {{"can_complete", false}, {"action", "Click(1)"}, {"observation", ""}, {"thought", ""}});
            }),
            DecisionErrc::SchemaViolation);

  const auto er = std::get<ExecReflectResponse>(
      parse_response(Role::ExecReflect, {{"subgoal_status", false}, {"goal_status", false}, {"reflection", "r"}}));
  EXPECT_FALSE(er.subgoal_status);
  EXPECT_EQ(er.reflection, "r");
  EXPECT_EQ(code_of([] { parse_response(Role::ExecReflect, {{"subgoal_status", 1}, {"goal_status", false}}); }),
            DecisionErrc::SchemaViolation);
  EXPECT_EQ(code_of([] { parse_response(Role::Plan, json::array()); }), DecisionErrc::SchemaViolation);
}

TEST(Glob, Matching) {
  EXPECT_TRUE(glob_match("set alarm*", "set alarm for 8 am"));
  EXPECT_FALSE(glob_match("set alarm*", "unset alarm"));
  EXPECT_TRUE(glob_match("*", ""));
  EXPECT_TRUE(glob_match("railway:*", "railway:timetable"));
}

TEST(ScriptedOracle, LookupAndNoMatch) {
  OracleRule r = rule(Role::Act, "set alarm*",
                      {{"can_complete", true}, {"action", "Click(2)"}, {"observation", "o"}, {"thought", "t"}});
  r.screen_glob = "clock:home";
  ScriptedOracle o({r});
  const auto a = std::get<ActResponse>(o.decide(request(Role::Act)));
  EXPECT_EQ(*a.action_text, "Click(2)");
  EXPECT_EQ(code_of([&] { o.decide(request(Role::Act, "set alarm", "railway:home")); }), DecisionErrc::NoMatchingRule);
  EXPECT_EQ(code_of([&] { o.decide(request(Role::Plan)); }), DecisionErrc::NoMatchingRule);
}

TEST(ScriptedOracle, MaxUsesStagesBehaviour) {
  ScriptedOracle o({rule(Role::PlanReflect, "*", {{"can_do", false}, {"reflection", "first"}}, 1),
                    rule(Role::PlanReflect, "*", {{"can_do", true}, {"reflection", "second"}})});
  EXPECT_EQ(std::get<PlanReflectResponse>(o.decide(request(Role::PlanReflect))).reflection, "first");
  EXPECT_EQ(std::get<PlanReflectResponse>(o.decide(request(Role::PlanReflect))).reflection, "second");
  EXPECT_EQ(std::get<PlanReflectResponse>(o.decide(request(Role::PlanReflect))).reflection, "second");
  EXPECT_EQ(o.calls(), 3u);
}

TEST(ScriptedOracle, ExtraMatchers) {
  OracleRule mem = rule(Role::Act, "*", {{"can_complete", true}, {"action", "Type(\"G1\")"}, {"observation", ""}, {"thought", ""}});
  mem.memory_glob = "*wrong input method*";
  OracleRule act = rule(Role::ExecReflect, "*", {{"subgoal_status", false}, {"goal_status", false}});
  act.action_glob = "Box_Input*";
  OracleRule post = rule(Role::ExecReflect, "*", {{"subgoal_status", true}, {"goal_status", true}});
  post.post_screen_glob = "railway:train_detail";
  ScriptedOracle o({mem, act, post});

  DecisionRequest a = request(Role::Act);
  EXPECT_EQ(code_of([&] { o.decide(a); }), DecisionErrc::NoMatchingRule);
  a.retrieved_memory = {"last failure: ...; reflection: wrong input method"};
  EXPECT_NO_THROW(o.decide(a));

  DecisionRequest e = request(Role::ExecReflect);
  e.prior_action = "Box_Input(0, \"G104\")";
  EXPECT_FALSE(std::get<ExecReflectResponse>(o.decide(e)).subgoal_status);
  e.prior_action = "Click(1)";
  e.post_screen_name = "railway:train_detail";
  EXPECT_TRUE(std::get<ExecReflectResponse>(o.decide(e)).goal_status);
}

TEST(ScriptedOracle, InvalidScriptedResponseIsSchemaViolation) {
  ScriptedOracle o({rule(Role::PlanReflect, "*", {{"can_do", "yes"}})});
  EXPECT_EQ(code_of([&] { o.decide(request(Role::PlanReflect)); }), DecisionErrc::SchemaViolation);
}

TEST(ScriptedOracle, LoadingFiles) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "moba_oracle_test";
  fs::create_directories(dir);
  std::ofstream(dir / "empty.json").close();
  ScriptedOracle empty = ScriptedOracle::load(dir / "empty.json");
  EXPECT_TRUE(empty.rules().empty());
  EXPECT_EQ(code_of([&] { empty.decide(request(Role::Act)); }), DecisionErrc::NoMatchingRule);

  std::ofstream(dir / "bad.json") << "{not json";
  EXPECT_EQ(code_of([&] { ScriptedOracle::load(dir / "bad.json"); }), DecisionErrc::FileFormat);
  std::ofstream(dir / "badrole.json") << R"([{"role": "Dream", "response": {}}])";
  EXPECT_EQ(code_of([&] { ScriptedOracle::load(dir / "badrole.json"); }), DecisionErrc::FileFormat);
  EXPECT_EQ(code_of([&] { ScriptedOracle::load(dir / "missing.json"); }), DecisionErrc::FileFormat);

  std::ofstream(dir / "dup.json") << R"({"rules": [
    {"role": "Plan", "goal_glob": "a*", "response": {"subgoals": ["x"]}},
    {"role": "Plan", "goal_glob": "a*", "response": {"subgoals": ["y"]}},
    {"role": "Plan", "goal_glob": "b*", "response": {"subgoals": ["z"]}, "max_uses": 1},
    {"role": "Plan", "goal_glob": "b*", "response": {"subgoals": ["w"]}}]})";
  ScriptedOracle dup = ScriptedOracle::load(dir / "dup.json");
  ASSERT_EQ(dup.warnings().size(), 1u);
  EXPECT_NE(dup.warnings()[0].find("DuplicateUnreachableRule"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Remote, ExtractFirstJsonObject) {
  EXPECT_EQ(extract_first_json_object("Sure! {\"a\": {\"b\": \"}\"}} trailing {\"c\":1}"), "{\"a\": {\"b\": \"}\"}}");
  EXPECT_EQ(extract_first_json_object("{broken {\"ok\": true}"), "{\"ok\": true}");
  EXPECT_FALSE(extract_first_json_object("no json here"));
}

TEST(Remote, PromptRendering) {
  DecisionRequest r = request(Role::Act);
  r.retrieved_memory = {"m1", "{goal}"};
  r.action_catalog = {"Click(element_index: int)"};
  const std::string p = render_prompt("G={goal} A={actions} M={memory} O={observation}", r);
  EXPECT_EQ(p, "G=set alarm for 8 am A=- Click(element_index: int) M=- m1\n- {goal} O=screen: clock:home");
  DecisionRequest e;
  e.role = Role::Plan;
  EXPECT_NE(render_prompt("{memory}", e).find("(none)"), std::string::npos);
  for (Role role : {Role::Plan, Role::PlanReflect, Role::Act, Role::ExecReflect})
    EXPECT_NE(default_prompt_template(role).find("{goal}"), std::string::npos);
}

TEST(Remote, ShippedPromptFilesMatchDefaults) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(MOBA_SOURCE_DIR) / "prompts";
  const std::pair<Role, const char*> files[] = {
      {Role::Plan, "plan.txt"}, {Role::PlanReflect, "plan_reflect.txt"}, {Role::Act, "act.txt"}, {Role::ExecReflect, "exec_reflect.txt"}};
  for (const auto& [role, name] : files) {
    std::ifstream in(dir / name);
    ASSERT_TRUE(in) << name;
    std::stringstream buf;
    buf << in.rdbuf();
    EXPECT_EQ(buf.str(), default_prompt_template(role) + "\n") << name;
  }
}

namespace {

RemoteConfig fast_config(const std::string& url) {
  RemoteConfig c;
  c.base_url = url;
  c.timeout = std::chrono::milliseconds(2000);
  c.base_delay = std::chrono::milliseconds(5);
  c.prompt_dir = "/nonexistent";
  return c;
}

}  // namespace

TEST(Remote, RoundTripAllRoles) {
  const std::map<std::string, std::string> replies{
      {"Plan", R"(Here you go: {"subgoals": ["open clock", "set time"]})"},
      {"PlanReflect", R"({"can_do": false, "reflection": "needs steps"})"},
      {"Act", R"j(```json
{"can_complete": true, "action": "Click(4)", "observation": "o", "thought": "t", "message": "m"}
```)j"},
      {"ExecReflect", R"({"subgoal_status": true, "goal_status": false, "reflection": "fine"})"},
  };
  StubServer stub([&](int, const json& body, const httplib::Request&, httplib::Response& res) {
    const std::string prompt = body["messages"][1]["content"];
    std::string role = "Act";
    if (prompt.find("Split the goal") != std::string::npos) role = "Plan";
    else if (prompt.find("carried out directly") != std::string::npos) role = "PlanReflect";
    else if (prompt.find("Screen after") != std::string::npos) role = "ExecReflect";
    res.set_content(StubServer::reply(replies.at(role)), "application/json");
  });
  ::setenv("MOBA_TEST_TOKEN", "secret", 1);
  RemoteConfig cfg = fast_config(stub.url());
  cfg.token_env = "MOBA_TEST_TOKEN";
  RemoteClient client(cfg);

  const auto plan = std::get<PlanResponse>(client.decide(request(Role::Plan)));
  EXPECT_EQ(plan.subgoals, (std::vector<std::string>{"open clock", "set time"}));
  EXPECT_FALSE(std::get<PlanReflectResponse>(client.decide(request(Role::PlanReflect))).can_do);
  const auto act = std::get<ActResponse>(client.decide(request(Role::Act)));
  EXPECT_EQ(*act.action, Action(actions::Click{4}));
  EXPECT_EQ(act.message, "m");
  EXPECT_EQ(std::get<ExecReflectResponse>(client.decide(request(Role::ExecReflect))).reflection, "fine");

  EXPECT_EQ(stub.count(), 4);
  EXPECT_EQ(client.requests_sent(), 4);
  const auto bodies = stub.bodies();
  EXPECT_EQ(bodies[0]["model"], "gpt-4o");
  EXPECT_EQ(bodies[0]["messages"][0]["role"], "system");
  EXPECT_EQ(stub.auth_headers()[0], "Bearer secret");
  ::unsetenv("MOBA_TEST_TOKEN");
}

TEST(Remote, RetriesFiveHundredsThenSucceeds) {
  StubServer stub([](int n, const json&, const httplib::Request&, httplib::Response& res) {
    if (n <= 2) {
      res.status = 503;
      return;
    }
    res.set_content(StubServer::reply(R"({"subgoals": ["a"]})"), "application/json");
  });
  RemoteClient client(fast_config(stub.url()));
  EXPECT_EQ(std::get<PlanResponse>(client.decide(request(Role::Plan))).subgoals.size(), 1u);
  EXPECT_EQ(stub.count(), 3);
}

TEST(Remote, BudgetExhausted) {
  StubServer stub([](int, const json&, const httplib::Request&, httplib::Response& res) { res.status = 500; });
  RemoteClient client(fast_config(stub.url()));
  EXPECT_EQ(code_of([&] { client.decide(request(Role::Plan)); }), DecisionErrc::BackendUnavailable);
  EXPECT_EQ(stub.count(), 3);
}

TEST(Remote, ClientErrorsAreNotRetried) {
  StubServer stub([](int, const json&, const httplib::Request&, httplib::Response& res) { res.status = 401; });
  RemoteClient client(fast_config(stub.url()));
  EXPECT_EQ(code_of([&] { client.decide(request(Role::Plan)); }), DecisionErrc::BackendUnavailable);
  EXPECT_EQ(stub.count(), 1);
}

TEST(Remote, SchemaViolations) {
  StubServer stub([](int n, const json&, const httplib::Request&, httplib::Response& res) {
    if (n == 1) res.set_content(StubServer::reply(R"({"can_do": "yes", "reflection": ""})"), "application/json");
    else if (n == 2) res.set_content(StubServer::reply("I cannot answer that."), "application/json");
    else res.set_content(R"({"unexpected": true})", "application/json");
  });
  RemoteClient client(fast_config(stub.url()));
  for (int i = 0; i < 3; ++i)
    EXPECT_EQ(code_of([&] { client.decide(request(Role::PlanReflect)); }), DecisionErrc::SchemaViolation) << i;
}

TEST(Remote, HungServerTimesOut) {
  StubServer stub([](int, const json&, const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(1500));
    res.set_content(StubServer::reply(R"({"subgoals": ["late"]})"), "application/json");
  });
  RemoteConfig cfg = fast_config(stub.url());
  cfg.timeout = std::chrono::milliseconds(300);
  RemoteClient client(cfg);
  const auto start = std::chrono::steady_clock::now();
  EXPECT_EQ(code_of([&] { client.decide(request(Role::Plan)); }), DecisionErrc::Timeout);
  EXPECT_LT(std::chrono::steady_clock::now() - start, std::chrono::milliseconds(1400));
}

TEST(Remote, UnreachableIsUnavailable) {
  RemoteConfig cfg = fast_config("http://127.0.0.1:1");
  RemoteClient client(cfg);
  const DecisionErrc c = code_of([&] { client.decide(request(Role::Plan)); });
  EXPECT_TRUE(c == DecisionErrc::BackendUnavailable || c == DecisionErrc::Timeout);
}

TEST(Remote, PromptDirOverridesTemplates) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "moba_prompt_test";
  fs::create_directories(dir);
  std::ofstream(dir / "plan.txt") << "CUSTOM {goal}";
  RemoteConfig cfg;
  cfg.prompt_dir = dir;
  RemoteClient client(cfg);
  EXPECT_EQ(client.build_body(request(Role::Plan))["messages"][1]["content"], "CUSTOM set alarm for 8 am");
  fs::remove_all(dir);
}
