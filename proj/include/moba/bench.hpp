#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "moba/agent.hpp"

namespace moba::bench {

enum class TaskType { Easy, Medium, Hard, Indirect, CrossApp };

std::string_view to_string(TaskType t);
std::optional<TaskType> task_type_from_name(std::string_view s);
const std::vector<TaskType>& all_task_types();

struct Milestone {
  enum class Kind { ScreenVisited, VarEquals, EventFired, ActionExecuted } kind = Kind::ScreenVisited;
  std::string label;
  std::string screen;   // ScreenVisited: "app:screen" name or screen key
  std::string app;      // VarEquals
  std::string name;     // VarEquals var, EventFired event name
  std::string value;    // VarEquals
  std::string pattern;  // ActionExecuted glob over the formatted action
};

struct PrepDirective {
  enum class Kind { SetVar, Goto, UserMemory } kind = Kind::SetVar;
  std::string app;
  std::string name;  // var name or screen id
  std::string value;
};

class TaskFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SuiteFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MissingRecord : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TaskDef {
  std::string task_id;
  TaskType task_type = TaskType::Easy;
  std::string command;
  std::vector<PrepDirective> preparation;
  std::vector<Milestone> milestones;
  std::optional<double> human_steps;
  std::vector<std::filesystem::path> device_specs;  // resolved against the task file
  std::filesystem::path oracle_script;
  std::optional<std::filesystem::path> memory_warm_start;
  bool ordered = false;
  Budgets budgets;
  std::uint64_t seed = 0;
};

TaskDef parse_task_def(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
TaskDef load_task_def(const std::filesystem::path& file);

struct Suite {
  std::string suite_id;
  std::vector<TaskDef> tasks;
};

Suite load_suite(const std::filesystem::path& file);

struct ScoreResult {
  std::vector<bool> achieved;
  std::map<int, int> step_of_milestone;  // milestone index -> env step
  int achieved_count = 0;
  int total_steps = 0;
  int effective_steps = 0;
};

/// Scores milestones from the env records of a merged event log.
ScoreResult score_run(const std::vector<nlohmann::json>& event_log, const std::vector<Milestone>& milestones,
                      bool ordered = false);

struct RunRecord {
  std::string task_id;
  std::vector<bool> milestones_achieved;
  std::map<int, int> step_of_milestone;
  int total_steps = 0;
  int effective_steps = 0;
  std::string status;
  std::string reason;
  double wall_time_ms = 0.0;
  std::vector<std::string> cases;

  int achieved() const;
  bool complete() const;
  nlohmann::ordered_json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
};

struct GroupMetrics {
  int tasks = 0;
  int milestones_total = 0;
  int ms = 0;
  int complete = 0;
  long long effective_steps = 0;
  double human_steps = 0.0;
  int human_milestones = 0;

  double cr() const { return tasks == 0 ? 0.0 : static_cast<double>(complete) / tasks; }
  std::optional<double> ee() const;
  std::optional<double> human_ee() const;
};

struct Metrics {
  std::map<TaskType, GroupMetrics> per_type;
  GroupMetrics overall;

  nlohmann::ordered_json to_json() const;
};

Metrics compute_metrics(const std::vector<RunRecord>& records, const std::vector<TaskDef>& defs);

/// "88 (66.2%)"; the percentage is omitted when max is 0.
std::string format_ms(int ms, int max);
/// "3.44 (97.5%)"; "-" when EE is absent.
std::string format_ee(std::optional<double> ee, std::optional<double> human_ee);
std::string format_fixed(double v, int decimals);

std::string render_report(const Metrics& metrics, const std::vector<RunRecord>& records);
std::string render_csv(const std::vector<RunRecord>& records, const std::vector<TaskDef>& defs);
void write_report(const std::filesystem::path& dir, const Metrics& metrics, const std::vector<RunRecord>& records,
                  const std::vector<TaskDef>& defs);

struct BackendChoice {
  enum class Kind { TaskScript, ScriptFile, Remote } kind = Kind::TaskScript;
  std::filesystem::path script;
};

BackendChoice parse_backend(std::string_view spec);

struct RunOptions {
  bool use_memory = true;
  bool use_plan = true;
  BackendChoice backend;
  std::optional<std::uint64_t> seed;
  int jobs = 1;
};

struct TaskRun {
  RunRecord record;
  std::string event_log;  // line-delimited JSON
};

TaskRun run_task(const TaskDef& def, const RunOptions& options);

struct SuiteResult {
  std::vector<TaskRun> runs;  // suite order
  Metrics metrics;
};

SuiteResult run_suite(const Suite& suite, const RunOptions& options);

/// Writes metrics.json, report.md, per_task.csv, records.json and logs/<task>.jsonl.
void write_suite_outputs(const std::filesystem::path& dir, const Suite& suite, const SuiteResult& result);

/// Re-renders report files from a directory previously produced by write_suite_outputs.
Metrics regenerate_report(const std::filesystem::path& dir);

}  // namespace moba::bench
