#include "moba/bench.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

namespace moba::bench {

using nlohmann::json;
using ojson = nlohmann::ordered_json;
namespace fs = std::filesystem;

std::string_view to_string(TaskType t) {
  switch (t) {
    case TaskType::Easy: return "Easy";
    case TaskType::Medium: return "Medium";
    case TaskType::Hard: return "Hard";
    case TaskType::Indirect: return "Indirect";
    case TaskType::CrossApp: return "CrossApp";
  }
  return "?";
}

const std::vector<TaskType>& all_task_types() {
  static const std::vector<TaskType> all{TaskType::Easy, TaskType::Medium, TaskType::Hard, TaskType::Indirect,
                                         TaskType::CrossApp};
  return all;
}

std::optional<TaskType> task_type_from_name(std::string_view s) {
  for (TaskType t : all_task_types())
    if (to_string(t) == s) return t;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// task definitions

namespace {

std::string str_field(const json& j, const char* key, const std::string& ctx) {
  if (!j.is_object() || !j.contains(key) || !j.at(key).is_string())
    throw TaskFormatError(ctx + ": missing string field '" + key + "'");
  return j.at(key).get<std::string>();
}

Milestone parse_milestone(const json& j, const std::string& ctx) {
  Milestone m;
  const std::string kind = str_field(j, "kind", ctx);
  m.label = j.value("label", std::string{});
  if (kind == "screen_visited") {
    m.kind = Milestone::Kind::ScreenVisited;
    m.screen = str_field(j, "screen", ctx);
  } else if (kind == "var_equals") {
    m.kind = Milestone::Kind::VarEquals;
    m.app = str_field(j, "app", ctx);
    m.name = str_field(j, "name", ctx);
    m.value = str_field(j, "value", ctx);
  } else if (kind == "event_fired") {
    m.kind = Milestone::Kind::EventFired;
    m.name = str_field(j, "name", ctx);
  } else if (kind == "action_executed") {
    m.kind = Milestone::Kind::ActionExecuted;
    m.pattern = str_field(j, "pattern", ctx);
  } else {
    throw TaskFormatError(ctx + ": unknown milestone kind '" + kind + "'");
  }
  if (m.label.empty()) m.label = kind;
  return m;
}

PrepDirective parse_prep(const json& j, const std::string& ctx) {
  if (!j.is_object() || j.size() != 1) throw TaskFormatError(ctx + ": directive must have exactly one kind");
  const auto& [kind, body] = *j.items().begin();
  PrepDirective d;
  if (kind == "set_var") {
    d.kind = PrepDirective::Kind::SetVar;
    d.app = str_field(body, "app", ctx);
    d.name = str_field(body, "name", ctx);
    d.value = str_field(body, "value", ctx);
  } else if (kind == "goto") {
    d.kind = PrepDirective::Kind::Goto;
    d.app = str_field(body, "app", ctx);
    d.name = str_field(body, "screen", ctx);
  } else if (kind == "user_memory") {
    if (!body.is_string()) throw TaskFormatError(ctx + ": user_memory expects a string");
    d.kind = PrepDirective::Kind::UserMemory;
    d.value = body.get<std::string>();
  } else {
    throw TaskFormatError(ctx + ": unknown directive '" + kind + "'");
  }
  return d;
}

json read_json(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw TaskFormatError("cannot open " + file.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw TaskFormatError(file.string() + ": " + e.what());
  }
}

}  // namespace

TaskDef parse_task_def(const json& j, const fs::path& base) {
  TaskDef d;
  d.task_id = str_field(j, "task_id", "task");
  const std::string ctx = "task " + d.task_id;
  const std::string type = str_field(j, "task_type", ctx);
  auto t = task_type_from_name(type);
  if (!t) throw TaskFormatError(ctx + ": unknown task_type '" + type + "'");
  d.task_type = *t;
  d.command = str_field(j, "command", ctx);
  for (const auto& p : j.value("preparation", json::array())) d.preparation.push_back(parse_prep(p, ctx));
  const json& ms = j.contains("milestones") ? j.at("milestones") : json::array();
  if (!ms.is_array() || ms.empty() || ms.size() > 6)
    throw TaskFormatError(ctx + ": a task needs between 1 and 6 milestones");
  for (std::size_t i = 0; i < ms.size(); ++i)
    d.milestones.push_back(parse_milestone(ms[i], ctx + " milestone " + std::to_string(i)));
  if (j.contains("human_steps") && !j.at("human_steps").is_null()) {
    if (!j.at("human_steps").is_number()) throw TaskFormatError(ctx + ": human_steps must be a number");
    d.human_steps = j.at("human_steps").get<double>();
  }
  for (const auto& s : j.value("device_specs", json::array())) d.device_specs.push_back(base / s.get<std::string>());
  if (d.device_specs.empty()) throw TaskFormatError(ctx + ": device_specs is empty");
  if (j.contains("oracle_script")) d.oracle_script = base / str_field(j, "oracle_script", ctx);
  if (j.contains("memory_warm_start")) d.memory_warm_start = base / str_field(j, "memory_warm_start", ctx);
  d.ordered = j.value("ordered", false);
  d.budgets = budgets_from_json(j.value("budgets", json::object()));
  d.seed = j.value("seed", std::uint64_t{0});
  return d;
}

TaskDef load_task_def(const fs::path& file) { return parse_task_def(read_json(file), file.parent_path()); }

Suite load_suite(const fs::path& file) {
  json j;
  try {
    j = read_json(file);
  } catch (const TaskFormatError& e) {
    throw SuiteFormatError(e.what());
  }
  if (!j.is_object() || !j.contains("tasks") || !j.at("tasks").is_array())
    throw SuiteFormatError(file.string() + ": suite needs a 'tasks' list");
  Suite s;
  s.suite_id = j.value("suite_id", file.stem().string());
  std::set<std::string> ids;
  for (const auto& t : j.at("tasks")) {
    if (!t.is_string()) throw SuiteFormatError(file.string() + ": task entries must be paths");
    try {
      s.tasks.push_back(load_task_def(file.parent_path() / t.get<std::string>()));
    } catch (const TaskFormatError& e) {
      throw SuiteFormatError(e.what());
    }
    if (!ids.insert(s.tasks.back().task_id).second)
      throw SuiteFormatError(file.string() + ": duplicate task_id '" + s.tasks.back().task_id + "'");
  }
  return s;
}

// ---------------------------------------------------------------------------
// scoring

ScoreResult score_run(const std::vector<json>& log, const std::vector<Milestone>& milestones, bool ordered) {
  ScoreResult r;
  r.achieved.assign(milestones.size(), false);
  std::map<std::pair<std::string, std::string>, std::string> vars;
  for (const auto& rec : log) {
    if (rec.value("phase", std::string{}) != "env") continue;
    const int step = rec.value("step", 0);
    r.total_steps = std::max(r.total_steps, step);
    const json events = rec.value("events", json::array());
    bool errored = false;
    std::set<std::string> fired;
    for (const auto& e : events) {
      const std::string type = e.value("type", std::string{});
      if (type == "set_var") vars[{e.value("app", std::string{}), e.value("name", std::string{})}] = e.value("value", std::string{});
      if (type == "error") errored = true;
      if (type == "event") fired.insert(e.value("name", std::string{}));
      fired.insert(type);
    }
    for (std::size_t i = 0; i < milestones.size(); ++i) {
      if (r.achieved[i]) continue;
      if (ordered && i > 0 && !r.achieved[i - 1]) break;
      const Milestone& m = milestones[i];
      bool holds = false;
      switch (m.kind) {
        case Milestone::Kind::ScreenVisited:
          holds = rec.value("screen_after", std::string{}) == m.screen || rec.value("key_after", std::string{}) == m.screen;
          break;
        case Milestone::Kind::VarEquals: {
          auto it = vars.find({m.app, m.name});
          holds = it != vars.end() && it->second == m.value;
          break;
        }
        case Milestone::Kind::EventFired:
          holds = fired.count(m.name) != 0;
          break;
        case Milestone::Kind::ActionExecuted:
          holds = !errored && glob_match(m.pattern, rec.value("action", std::string{}));
          break;
      }
      if (holds) {
        r.achieved[i] = true;
        r.step_of_milestone[static_cast<int>(i)] = step;
        ++r.achieved_count;
        r.effective_steps = std::max(r.effective_steps, step);
      }
    }
  }
  return r;
}

int RunRecord::achieved() const {
  return static_cast<int>(std::count(milestones_achieved.begin(), milestones_achieved.end(), true));
}

bool RunRecord::complete() const {
  return !milestones_achieved.empty() &&
         std::all_of(milestones_achieved.begin(), milestones_achieved.end(), [](bool b) { return b; });
}

ojson RunRecord::to_json() const {
  ojson j;
  j["task_id"] = task_id;
  j["milestones_achieved"] = milestones_achieved;
  ojson steps = ojson::object();
  for (const auto& [i, s] : step_of_milestone) steps[std::to_string(i)] = s;
  j["step_of_milestone"] = steps;
  j["total_steps"] = total_steps;
  j["effective_steps"] = effective_steps;
  j["status"] = status;
  j["reason"] = reason;
  j["wall_time_ms"] = wall_time_ms;
  j["cases"] = cases;
  return j;
}

RunRecord RunRecord::from_json(const json& j) {
  RunRecord r;
  r.task_id = j.at("task_id").get<std::string>();
  r.milestones_achieved = j.at("milestones_achieved").get<std::vector<bool>>();
  const json steps = j.value("step_of_milestone", json::object());
  for (const auto& [k, v] : steps.items()) r.step_of_milestone[std::stoi(k)] = v.get<int>();
  r.total_steps = j.value("total_steps", 0);
  r.effective_steps = j.value("effective_steps", 0);
  r.status = j.value("status", std::string{});
  r.reason = j.value("reason", std::string{});
  r.wall_time_ms = j.value("wall_time_ms", 0.0);
  r.cases = j.value("cases", std::vector<std::string>{});
  return r;
}

// ---------------------------------------------------------------------------
// metrics

std::optional<double> GroupMetrics::ee() const {
  if (ms == 0) return std::nullopt;
  return static_cast<double>(effective_steps) / ms;
}

std::optional<double> GroupMetrics::human_ee() const {
  if (human_milestones == 0) return std::nullopt;
  return human_steps / human_milestones;
}

Metrics compute_metrics(const std::vector<RunRecord>& records, const std::vector<TaskDef>& defs) {
  std::map<std::string, const RunRecord*> by_id;
  for (const auto& r : records) by_id[r.task_id] = &r;
  Metrics m;
  for (TaskType t : all_task_types()) m.per_type[t];
  for (const auto& d : defs) {
    auto it = by_id.find(d.task_id);
    if (it == by_id.end()) throw MissingRecord("no run record for task '" + d.task_id + "'");
    const RunRecord& r = *it->second;
    for (GroupMetrics* g : {&m.per_type[d.task_type], &m.overall}) {
      ++g->tasks;
      g->milestones_total += static_cast<int>(d.milestones.size());
      g->ms += r.achieved();
      g->complete += r.complete() ? 1 : 0;
      g->effective_steps += r.effective_steps;
      if (d.human_steps) {
        g->human_steps += *d.human_steps;
        g->human_milestones += static_cast<int>(d.milestones.size());
      }
    }
  }
  return m;
}

namespace {

ojson group_json(const GroupMetrics& g) {
  ojson j;
  j["tasks"] = g.tasks;
  j["milestones_total"] = g.milestones_total;
  j["MS"] = g.ms;
  j["CR"] = g.cr();
  j["complete"] = g.complete;
  j["effective_steps"] = g.effective_steps;
  j["EE"] = g.ee() ? ojson(*g.ee()) : ojson(nullptr);
  j["human_EE"] = g.human_ee() ? ojson(*g.human_ee()) : ojson(nullptr);
  return j;
}

}  // namespace

ojson Metrics::to_json() const {
  ojson j;
  ojson per = ojson::object();
  for (const auto& [t, g] : per_type) per[std::string(to_string(t))] = group_json(g);
  j["per_type"] = per;
  j["overall"] = group_json(overall);
  return j;
}

std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string format_ms(int ms, int max) {
  std::string s = std::to_string(ms);
  if (max > 0) s += " (" + format_fixed(100.0 * ms / max, 1) + "%)";
  return s;
}

std::string format_ee(std::optional<double> ee, std::optional<double> human) {
  if (!ee) return "-";
  std::string s = format_fixed(*ee, 2);
  if (human && *human > 0) s += " (" + format_fixed(100.0 * *ee / *human, 1) + "%)";
  return s;
}

std::string render_report(const Metrics& m, const std::vector<RunRecord>& records) {
  std::ostringstream out;
  out << "# Benchmark report\n\n";
  out << "| Type | Tasks | CR | MS | EE |\n|---|---|---|---|---|\n";
  auto row = [&](std::string_view name, const GroupMetrics& g) {
    out << "| " << name << " | " << g.tasks << " | " << g.complete << "/" << g.tasks << " | "
        << format_ms(g.ms, g.milestones_total) << " | " << format_ee(g.ee(), g.human_ee()) << " |\n";
  };
  for (const auto& [t, g] : m.per_type)
    if (g.tasks > 0) row(to_string(t), g);
  row("Overall", m.overall);
  out << "\nMS percentages are relative to the total milestones; EE percentages are relative to the human "
         "baseline where task definitions provide one.\n";
  if (!records.empty()) {
    out << "\n| Task | Status | Milestones | Effective steps | Total steps |\n|---|---|---|---|---|\n";
    for (const auto& r : records)
      out << "| " << r.task_id << " | " << r.status << " | " << r.achieved() << "/" << r.milestones_achieved.size()
          << " | " << r.effective_steps << " | " << r.total_steps << " |\n";
  }
  return out.str();
}

std::string render_csv(const std::vector<RunRecord>& records, const std::vector<TaskDef>& defs) {
  std::map<std::string, const TaskDef*> by_id;
  for (const auto& d : defs) by_id[d.task_id] = &d;
  std::ostringstream out;
  out << "task_id,task_type,status,milestones_total,milestones_achieved,complete,effective_steps,total_steps,"
         "human_steps,wall_time_ms\n";
  for (const auto& r : records) {
    const TaskDef* d = by_id.count(r.task_id) ? by_id[r.task_id] : nullptr;
    out << r.task_id << "," << (d ? to_string(d->task_type) : "") << "," << r.status << ","
        << r.milestones_achieved.size() << "," << r.achieved() << "," << (r.complete() ? 1 : 0) << ","
        << r.effective_steps << "," << r.total_steps << ","
        << (d && d->human_steps ? format_fixed(*d->human_steps, 2) : "") << "," << format_fixed(r.wall_time_ms, 1)
        << "\n";
  }
  return out.str();
}

namespace {

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << text;
}

}  // namespace

void write_report(const fs::path& dir, const Metrics& metrics, const std::vector<RunRecord>& records,
                  const std::vector<TaskDef>& defs) {
  fs::create_directories(dir);
  write_text(dir / "metrics.json", metrics.to_json().dump(2) + "\n");
  write_text(dir / "report.md", render_report(metrics, records));
  write_text(dir / "per_task.csv", render_csv(records, defs));
}

// ---------------------------------------------------------------------------
// running

BackendChoice parse_backend(std::string_view spec) {
  BackendChoice b;
  if (spec.empty() || spec == "scripted") return b;
  if (spec == "remote") {
    b.kind = BackendChoice::Kind::Remote;
    return b;
  }
  if (spec.rfind("scripted:", 0) == 0 && spec.size() > 9) {
    b.kind = BackendChoice::Kind::ScriptFile;
    b.script = std::string(spec.substr(9));
    return b;
  }
  throw std::invalid_argument("backend must be 'scripted', 'scripted:<file>' or 'remote'");
}

TaskRun run_task(const TaskDef& def, const RunOptions& options) {
  TaskRun run;
  run.record.task_id = def.task_id;
  run.record.milestones_achieved.assign(def.milestones.size(), false);
  const auto started = std::chrono::steady_clock::now();
  EventLog log;
  try {
    std::vector<sim::AppSpec> apps;
    for (const auto& f : def.device_specs) apps.push_back(sim::load_app_spec(f));
    sim::SimDevice device(std::move(apps), options.seed.value_or(def.seed));

    MemoryStore memory;
    if (def.memory_warm_start) memory.warm_start(*def.memory_warm_start);
    for (const auto& id : device.installed_apps())
      if (std::none_of(memory.apps().begin(), memory.apps().end(), [&](const AppMemoryEntry& a) { return a.app_id == id; }))
        memory.upsert_app_entry(AppMemoryEntry{id, device.app(id).description, {}});

    for (const auto& p : def.preparation) {
      switch (p.kind) {
        case PrepDirective::Kind::SetVar: device.prepare_set_var(p.app, p.name, p.value); break;
        case PrepDirective::Kind::Goto: device.prepare_goto(p.app, p.name); break;
        case PrepDirective::Kind::UserMemory: memory.append_user_memory(UserMemoryEntry{p.value, 0}); break;
      }
    }
    device.attach_log(&log);

    std::unique_ptr<DecisionBackend> backend;
    switch (options.backend.kind) {
      case BackendChoice::Kind::TaskScript:
        backend = std::make_unique<ScriptedOracle>(ScriptedOracle::load(def.oracle_script));
        break;
      case BackendChoice::Kind::ScriptFile:
        backend = std::make_unique<ScriptedOracle>(ScriptedOracle::load(options.backend.script));
        break;
      case BackendChoice::Kind::Remote:
        backend = std::make_unique<RemoteClient>(RemoteConfig::from_env());
        break;
    }

    AgentConfig config;
    config.budgets = def.budgets;
    config.use_memory = options.use_memory;
    config.use_plan = options.use_plan;
    EpisodeContext ctx{device, memory, *backend, config, &log};
    const EpisodeReport report = run_episode(def.command, ctx);
    run.record.status = std::string(to_string(report.status));
    run.record.reason = report.reason;
    for (AdaptiveCase c : report.cases) run.record.cases.push_back(std::string(to_string(c)));
  } catch (const std::exception& e) {
    run.record.status = "error";
    run.record.reason = e.what();
  }
  run.event_log = log.text();
  const ScoreResult score = score_run(EventLog::parse(run.event_log), def.milestones, def.ordered);
  run.record.milestones_achieved = score.achieved;
  run.record.step_of_milestone = score.step_of_milestone;
  run.record.total_steps = score.total_steps;
  run.record.effective_steps = score.effective_steps;
  run.record.wall_time_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return run;
}

SuiteResult run_suite(const Suite& suite, const RunOptions& options) {
  SuiteResult result;
  result.runs.resize(suite.tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < suite.tasks.size(); i = next++) result.runs[i] = run_task(suite.tasks[i], options);
  };
  const int jobs = std::max(1, std::min<int>(options.jobs, static_cast<int>(suite.tasks.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<RunRecord> records;
  for (const auto& r : result.runs) records.push_back(r.record);
  result.metrics = compute_metrics(records, suite.tasks);
  return result;
}

void write_suite_outputs(const fs::path& dir, const Suite& suite, const SuiteResult& result) {
  fs::create_directories(dir / "logs");
  std::vector<RunRecord> records;
  ojson recs = ojson::array();
  for (const auto& r : result.runs) {
    records.push_back(r.record);
    recs.push_back(r.record.to_json());
    write_text(dir / "logs" / (r.record.task_id + ".jsonl"), r.event_log);
  }
  ojson tasks = ojson::array();
  for (const auto& d : suite.tasks) {
    ojson t;
    t["task_id"] = d.task_id;
    t["task_type"] = std::string(to_string(d.task_type));
    t["milestones"] = d.milestones.size();
    t["human_steps"] = d.human_steps ? ojson(*d.human_steps) : ojson(nullptr);
    tasks.push_back(t);
  }
  ojson doc;
  doc["suite_id"] = suite.suite_id;
  doc["tasks"] = tasks;
  doc["records"] = recs;
  write_text(dir / "records.json", doc.dump(2) + "\n");
  write_report(dir, result.metrics, records, suite.tasks);
}

Metrics regenerate_report(const fs::path& dir) {
  std::ifstream in(dir / "records.json");
  if (!in) throw std::runtime_error("no records.json in " + dir.string());
  const json doc = json::parse(in);
  std::vector<TaskDef> defs;
  for (const auto& t : doc.at("tasks")) {
    TaskDef d;
    d.task_id = t.at("task_id").get<std::string>();
    auto type = task_type_from_name(t.at("task_type").get<std::string>());
    if (!type) throw std::runtime_error("unknown task_type in records.json");
    d.task_type = *type;
    d.milestones.resize(t.at("milestones").get<std::size_t>());
    if (!t.at("human_steps").is_null()) d.human_steps = t.at("human_steps").get<double>();
    defs.push_back(std::move(d));
  }
  std::vector<RunRecord> records;
  for (const auto& r : doc.at("records")) records.push_back(RunRecord::from_json(r));
  Metrics m = compute_metrics(records, defs);
  write_report(dir, m, records, defs);
  return m;
}

}  // namespace moba::bench
