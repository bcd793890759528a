#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "moba/bench.hpp"

using namespace moba;
using namespace moba::bench;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kData = fs::path(MOBA_SOURCE_DIR) / "data";

json env_record(int step, const std::string& action, const std::string& screen_after, json events = json::array()) {
  return {{"step", step},           {"phase", "env"},          {"action", action},   {"events", events},
          {"screen_before", "x:y"}, {"screen_after", screen_after}, {"key_before", "k"}, {"key_after", "k"}};
}

Milestone visited(const std::string& screen) {
  Milestone m;
  m.kind = Milestone::Kind::ScreenVisited;
  m.screen = screen;
  return m;
}

/// A log of `total` Back() steps on "app:idle", with "app:s<i>" visited at each listed step.
std::vector<json> log_visiting(int total, const std::map<int, std::string>& at) {
  std::vector<json> log;
  for (int s = 1; s <= total; ++s) {
    auto it = at.find(s);
    log.push_back(env_record(s, "Back()", it == at.end() ? "app:idle" : it->second));
  }
  return log;
}

json task_json() { return json::parse(std::ifstream(kData / "tasks/easy_timer.json")); }

}  // namespace

TEST(Score, MilestonesAtTwoFiveNine) {
  const auto log = log_visiting(12, {{2, "app:a"}, {5, "app:b"}, {9, "app:c"}});
  const ScoreResult r = score_run(log, {visited("app:a"), visited("app:b"), visited("app:c")});
  EXPECT_EQ(r.achieved_count, 3);
  EXPECT_EQ(r.effective_steps, 9);
  EXPECT_EQ(r.total_steps, 12);
  EXPECT_EQ(r.step_of_milestone.at(0), 2);
  EXPECT_EQ(r.step_of_milestone.at(2), 9);
}

TEST(Score, NothingAchieved) {
  const ScoreResult r = score_run(log_visiting(6, {}), {visited("app:a"), visited("app:b")});
  EXPECT_EQ(r.achieved_count, 0);
  EXPECT_EQ(r.effective_steps, 0);
  EXPECT_EQ(r.total_steps, 6);
  EXPECT_TRUE(score_run({}, {visited("app:a")}).step_of_milestone.empty());
}

TEST(Score, OutOfOrderUsesTheLatest) {
  const auto log = log_visiting(8, {{3, "app:b"}, {7, "app:a"}});
  const ScoreResult r = score_run(log, {visited("app:a"), visited("app:b")});
  EXPECT_EQ(r.achieved_count, 2);
  EXPECT_EQ(r.effective_steps, 7);
  // in ordered mode the second milestone must wait for the first
  const ScoreResult o = score_run(log, {visited("app:a"), visited("app:b")}, true);
  EXPECT_EQ(o.achieved_count, 1);
  EXPECT_EQ(o.effective_steps, 7);
}

TEST(Score, MilestoneKinds) {
  Milestone var;
  var.kind = Milestone::Kind::VarEquals;
  var.app = "railway";
  var.name = "train_no";
  var.value = "G104";
  Milestone ev;
  ev.kind = Milestone::Kind::EventFired;
  ev.name = "alarm_saved";
  Milestone act;
  act.kind = Milestone::Kind::ActionExecuted;
  act.pattern = "Open_App(*)";
  std::vector<json> log{
      env_record(1, "Open_App(\"ghost\")", "launcher:home", json::array({{{"type", "error"}, {"code", "UnknownApp"}}})),
      env_record(2, "Type(\"G1\")", "railway:timetable",
                 json::array({{{"type", "set_var"}, {"app", "railway"}, {"name", "train_no"}, {"value", "G1"}}})),
      env_record(3, "Type(\"04\")", "railway:timetable",
                 json::array({{{"type", "set_var"}, {"app", "railway"}, {"name", "train_no"}, {"value", "G104"}}})),
      env_record(4, "Open_App(\"clock\")", "clock:home"),
      env_record(5, "Click(1)", "clock:home", json::array({{{"type", "event"}, {"name", "alarm_saved"}}})),
  };
  log.insert(log.begin() + 1, json{{"step", 1}, {"phase", "act"}, {"payload", {{"action", "Open_App(\"x\")"}}}});
  const ScoreResult r = score_run(log, {var, ev, act});
  EXPECT_EQ(r.step_of_milestone.at(0), 3);
  EXPECT_EQ(r.step_of_milestone.at(1), 5);
  EXPECT_EQ(r.step_of_milestone.at(2), 4);  // the errored attempt at step 1 does not count
}

TEST(Metrics, MatchBruteForce) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> pick(0, 4), count(1, 6), steps(0, 30), coin(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<TaskDef> defs;
    std::vector<RunRecord> recs;
    const int n = std::uniform_int_distribution<int>(1, 15)(rng);
    for (int i = 0; i < n; ++i) {
      TaskDef d;
      d.task_id = "t" + std::to_string(i);
      d.task_type = all_task_types()[static_cast<std::size_t>(pick(rng))];
      d.milestones.resize(static_cast<std::size_t>(count(rng)));
      if (coin(rng)) d.human_steps = steps(rng) + 1;
      RunRecord r;
      r.task_id = d.task_id;
      for (std::size_t k = 0; k < d.milestones.size(); ++k) r.milestones_achieved.push_back(coin(rng) == 1);
      r.effective_steps = steps(rng);
      defs.push_back(d);
      recs.push_back(r);
    }
    std::shuffle(recs.begin(), recs.end(), rng);
    const Metrics m = compute_metrics(recs, defs);

    for (TaskType t : all_task_types()) {
      int tasks = 0, ms = 0, total = 0, complete = 0, hm = 0;
      long long eff = 0;
      double hs = 0;
      for (const auto& d : defs) {
        if (d.task_type != t) continue;
        const RunRecord& r = *std::find_if(recs.begin(), recs.end(), [&](const RunRecord& x) { return x.task_id == d.task_id; });
        ++tasks;
        int got = 0;
        for (bool b : r.milestones_achieved) got += b;
        ms += got;
        total += static_cast<int>(d.milestones.size());
        complete += got == static_cast<int>(d.milestones.size());
        eff += r.effective_steps;
        if (d.human_steps) {
          hs += *d.human_steps;
          hm += static_cast<int>(d.milestones.size());
        }
      }
      const GroupMetrics& g = m.per_type.at(t);
      ASSERT_EQ(g.tasks, tasks);
      ASSERT_EQ(g.ms, ms);
      ASSERT_EQ(g.milestones_total, total);
      ASSERT_EQ(g.complete, complete);
      ASSERT_EQ(g.effective_steps, eff);
      if (ms == 0)
        ASSERT_FALSE(g.ee());
      else
        ASSERT_DOUBLE_EQ(*g.ee(), static_cast<double>(eff) / ms);
      if (hm == 0)
        ASSERT_FALSE(g.human_ee());
      else
        ASSERT_DOUBLE_EQ(*g.human_ee(), hs / hm);
    }
    ASSERT_EQ(m.overall.tasks, n);
  }
}

TEST(Metrics, MissingRecordAndEmptyGroups) {
  TaskDef d;
  d.task_id = "lonely";
  d.milestones.resize(2);
  EXPECT_THROW(compute_metrics({}, {d}), MissingRecord);
  RunRecord r;
  r.task_id = "lonely";
  r.milestones_achieved = {false, false};
  const Metrics m = compute_metrics({r}, {d});
  EXPECT_FALSE(m.overall.ee());
  EXPECT_EQ(m.overall.cr(), 0.0);
  EXPECT_EQ(m.to_json()["overall"]["EE"], nullptr);
  EXPECT_EQ(GroupMetrics{}.cr(), 0.0);
}

TEST(Format, Strings) {
  EXPECT_EQ(format_ms(88, 133), "88 (66.2%)");
  EXPECT_EQ(format_ms(5, 0), "5");
  EXPECT_EQ(format_ee(3.44, 3.44 / 0.975), "3.44 (97.5%)");
  EXPECT_EQ(format_ee(3.44, std::nullopt), "3.44");
  EXPECT_EQ(format_ee(std::nullopt, 2.0), "-");
  EXPECT_EQ(format_fixed(3.525, 1), "3.5");
}

TEST(TaskDefs, ParsingErrors) {
  EXPECT_NO_THROW(parse_task_def(task_json(), kData / "tasks"));
  json j = task_json();
  j["task_type"] = "Impossible";
  EXPECT_THROW(parse_task_def(j), TaskFormatError);
  j = task_json();
  j["milestones"] = json::array();
  EXPECT_THROW(parse_task_def(j), TaskFormatError);
  j = task_json();
  for (int i = 0; i < 7; ++i) j["milestones"].push_back(j["milestones"][0]);
  EXPECT_THROW(parse_task_def(j), TaskFormatError);
  j = task_json();
  j["milestones"][0]["kind"] = "telepathy";
  EXPECT_THROW(parse_task_def(j), TaskFormatError);
  j = task_json();
  j["preparation"] = json::array({{{"levitate", {}}}});
  EXPECT_THROW(parse_task_def(j), TaskFormatError);
  j = task_json();
  j.erase("command");
  EXPECT_THROW(parse_task_def(j), TaskFormatError);
  j = task_json();
  j["device_specs"] = json::array();
  EXPECT_THROW(parse_task_def(j), TaskFormatError);
  j = task_json();
  j["human_steps"] = "four";
  EXPECT_THROW(parse_task_def(j), TaskFormatError);
  EXPECT_THROW(load_task_def("/nonexistent.json"), TaskFormatError);
}

TEST(TaskDefs, PathsResolveAgainstTheFile) {
  const TaskDef d = load_task_def(kData / "tasks/hard_search_g104.json");
  EXPECT_TRUE(d.ordered);
  EXPECT_EQ(d.task_type, TaskType::Hard);
  EXPECT_EQ(d.milestones.size(), 3u);
  for (const auto& s : d.device_specs) EXPECT_TRUE(fs::exists(s)) << s;
  EXPECT_TRUE(fs::exists(d.oracle_script));
}

TEST(Suites, ParsingErrors) {
  const fs::path dir = fs::temp_directory_path() / "moba_suite_test";
  fs::create_directories(dir);
  std::ofstream(dir / "notasks.json") << R"({"suite_id": "x"})";
  EXPECT_THROW(load_suite(dir / "notasks.json"), SuiteFormatError);
  const std::string t = (kData / "tasks/easy_timer.json").string();
  std::ofstream(dir / "dup.json") << json{{"tasks", {t, t}}}.dump();
  EXPECT_THROW(load_suite(dir / "dup.json"), SuiteFormatError);
  std::ofstream(dir / "missing.json") << R"({"tasks": ["nope.json"]})";
  EXPECT_THROW(load_suite(dir / "missing.json"), SuiteFormatError);
  EXPECT_THROW(load_suite(dir / "absent.json"), SuiteFormatError);
  fs::remove_all(dir);
}

TEST(Records, JsonRoundTrip) {
  RunRecord r;
  r.task_id = "a";
  r.milestones_achieved = {true, false};
  r.step_of_milestone = {{0, 4}};
  r.total_steps = 9;
  r.effective_steps = 4;
  r.status = "failed_budget";
  r.reason = "max_steps";
  r.cases = {"refinement"};
  const RunRecord back = RunRecord::from_json(json::parse(r.to_json().dump()));
  EXPECT_EQ(back.to_json(), r.to_json());
  EXPECT_EQ(back.achieved(), 1);
  EXPECT_FALSE(back.complete());
}

TEST(Backend, Choice) {
  EXPECT_EQ(parse_backend("scripted").kind, BackendChoice::Kind::TaskScript);
  const BackendChoice f = parse_backend("scripted:/tmp/x.json");
  EXPECT_EQ(f.kind, BackendChoice::Kind::ScriptFile);
  EXPECT_EQ(f.script, "/tmp/x.json");
  EXPECT_EQ(parse_backend("remote").kind, BackendChoice::Kind::Remote);
  EXPECT_THROW(parse_backend("psychic"), std::invalid_argument);
}

TEST(GoldenSuite, RunsCompletelyAndDeterministically) {
  const Suite suite = load_suite(kData / "golden_suite.json");
  ASSERT_EQ(suite.tasks.size(), 12u);
  RunOptions one;
  const SuiteResult a = run_suite(suite, one);
  EXPECT_EQ(a.metrics.overall.complete, 12);
  for (const auto& run : a.runs) EXPECT_EQ(run.record.status, "complete") << run.record.task_id << ": " << run.record.reason;
  RunOptions two;
  two.jobs = 2;
  const SuiteResult b = run_suite(suite, two);
  ASSERT_EQ(a.runs.size(), b.runs.size());
  for (std::size_t i = 0; i < a.runs.size(); ++i) {
    EXPECT_EQ(a.runs[i].event_log, b.runs[i].event_log) << a.runs[i].record.task_id;
    // rescoring the recorded log reproduces the record
    const ScoreResult s = score_run(EventLog::parse(a.runs[i].event_log), suite.tasks[i].milestones, suite.tasks[i].ordered);
    EXPECT_EQ(s.achieved, a.runs[i].record.milestones_achieved);
    EXPECT_EQ(s.effective_steps, a.runs[i].record.effective_steps);
  }

  const fs::path out = fs::temp_directory_path() / "moba_golden_out";
  fs::remove_all(out);
  write_suite_outputs(out, suite, a);
  for (const char* f : {"metrics.json", "report.md", "per_task.csv", "records.json"}) EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_TRUE(fs::exists(out / "logs" / (suite.tasks[0].task_id + ".jsonl")));
  const Metrics again = regenerate_report(out);
  EXPECT_EQ(again.to_json(), a.metrics.to_json());
  fs::remove_all(out);
}
