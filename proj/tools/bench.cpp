// bench: run, score and report milestone benchmarks; distill view hierarchies.
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "moba/bench.hpp"
#include "moba/vh.hpp"

namespace fs = std::filesystem;
using namespace moba;

namespace {

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + file.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int cmd_run(const std::string& target, const bench::RunOptions& opts, const fs::path& out) {
  const nlohmann::json doc = nlohmann::json::parse(slurp(target));
  if (doc.is_object() && doc.contains("tasks")) {
    const bench::Suite suite = bench::load_suite(target);
    const bench::SuiteResult result = bench::run_suite(suite, opts);
    bench::write_suite_outputs(out, suite, result);
    std::vector<bench::RunRecord> records;
    for (const auto& r : result.runs) records.push_back(r.record);
    std::cout << bench::render_report(result.metrics, records);
    std::cout << "\nwrote " << (out / "report.md").string() << "\n";
    return 0;
  }
  const bench::TaskDef def = bench::parse_task_def(doc, fs::path(target).parent_path());
  const bench::TaskRun run = bench::run_task(def, opts);
  fs::create_directories(out);
  std::ofstream(out / (def.task_id + ".jsonl"), std::ios::binary) << run.event_log;
  std::cout << run.record.to_json().dump(2) << "\n";
  return run.record.status == "error" ? 1 : 0;
}

int cmd_score(const fs::path& log, const fs::path& taskdef) {
  const bench::TaskDef def = bench::load_task_def(taskdef);
  const bench::ScoreResult s = bench::score_run(EventLog::read(log), def.milestones, def.ordered);
  nlohmann::ordered_json j;
  j["task_id"] = def.task_id;
  j["milestones_achieved"] = s.achieved;
  nlohmann::ordered_json steps = nlohmann::ordered_json::object();
  for (const auto& [i, step] : s.step_of_milestone) steps[def.milestones[static_cast<std::size_t>(i)].label] = step;
  j["step_of_milestone"] = steps;
  j["achieved"] = s.achieved_count;
  j["total_steps"] = s.total_steps;
  j["effective_steps"] = s.effective_steps;
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_distill(const fs::path& xml, const std::string& config_file, const std::string& json_out,
                const std::string& overlay_out) {
  DistillConfig config;
  if (!config_file.empty()) config = distill_config_from_json(nlohmann::json::parse(slurp(config_file)));
  const ScreenObservation obs = make_observation(slurp(xml), "", xml.filename().string(), {}, config);
  std::cout << obs.describe();
  if (!json_out.empty()) std::ofstream(json_out) << to_json(obs.elements).dump(2) << "\n";
  if (!overlay_out.empty()) std::ofstream(overlay_out) << to_json(annotate(obs.elements)).dump(2) << "\n";
  return 0;
}

int cmd_inspect(const std::vector<std::string>& specs) {
  std::vector<fs::path> files(specs.begin(), specs.end());
  sim::SimDevice device = sim::SimDevice::load(files, 0);
  std::cout << device.observe_distilled().describe() << "\n";
  for (const auto& id : device.installed_apps())
    for (const auto& [screen, spec] : device.app(id).screens) {
      sim::SimDevice probe = sim::SimDevice::load(files, 0);
      probe.prepare_goto(id, screen);
      std::cout << probe.observe_distilled().describe() << "\n";
    }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MobA desk-scale benchmark harness"};
  app.require_subcommand(1);

  bench::RunOptions opts;
  std::string target;
  std::string backend = "scripted";
  std::uint64_t seed = 0;
  std::string out = "bench_out";
  bool no_memory = false;
  bool no_plan = false;
  auto* run = app.add_subcommand("run", "run a suite file or a single task definition");
  run->add_option("target", target, "suite or task definition JSON")->required()->check(CLI::ExistingFile);
  run->add_flag("--no-memory", no_memory, "empty every retrieved_memory field");
  run->add_flag("--no-plan", no_plan, "flat act/reflect loop without decomposition");
  run->add_option("--backend", backend, "scripted | scripted:<file> | remote");
  auto* seed_opt = run->add_option("--seed", seed, "device seed override");
  run->add_option("--jobs", opts.jobs, "parallel episodes")->check(CLI::PositiveNumber);
  run->add_option("--out", out, "output directory");

  std::string log_file;
  std::string taskdef;
  auto* score = app.add_subcommand("score", "score a recorded event log against a task definition");
  score->add_option("log", log_file)->required()->check(CLI::ExistingFile);
  score->add_option("taskdef", taskdef)->required()->check(CLI::ExistingFile);

  std::string report_dir;
  auto* report = app.add_subcommand("report", "regenerate report files from a run directory");
  report->add_option("dir", report_dir)->required()->check(CLI::ExistingDirectory);

  std::string xml;
  std::string config_file;
  std::string json_out;
  std::string overlay_out;
  auto* distill = app.add_subcommand("distill", "distill a view-hierarchy XML dump");
  distill->add_option("xml", xml)->required()->check(CLI::ExistingFile);
  distill->add_option("--config", config_file, "distiller config JSON")->check(CLI::ExistingFile);
  distill->add_option("--json-out", json_out, "write indexed elements as JSON");
  distill->add_option("--overlay-out", overlay_out, "write overlay drawing instructions as JSON");

  std::vector<std::string> inspect_specs;
  auto* inspect = app.add_subcommand("inspect", "print the distilled view of every screen of some app specs");
  inspect->add_option("specs", inspect_specs)->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      opts.use_memory = !no_memory;
      opts.use_plan = !no_plan;
      opts.backend = bench::parse_backend(backend);
      if (*seed_opt) opts.seed = seed;
      return cmd_run(target, opts, out);
    }
    if (*score) return cmd_score(log_file, taskdef);
    if (*report) {
      const bench::Metrics m = bench::regenerate_report(report_dir);
      std::cout << "overall MS " << m.overall.ms << ", CR " << m.overall.complete << "/" << m.overall.tasks << "\n";
      return 0;
    }
    if (*inspect) return cmd_inspect(inspect_specs);
    if (*distill) return cmd_distill(xml, config_file, json_out, overlay_out);
  } catch (const std::exception& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
