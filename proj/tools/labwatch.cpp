// labwatch: anomaly monitoring for scripted laboratory workflows.
//
// Subcommands: validate, render-prompt, judge, eval, report, monitor.
// Verdict-bearing commands use distinct exit codes (0 normal, 10 anomalous,
// 11 uncertain) so schedulers can branch without parsing output.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "labwatch/labwatch.hpp"

namespace {

namespace fs = std::filesystem;
using labwatch::Error;
using labwatch::ErrorKind;

constexpr int kExitUsage = 64;
constexpr int kExitAnomalous = 10;
constexpr int kExitUncertain = 11;
constexpr int kExitProviderFailure = 4;

struct ProviderOptions {
  std::string provider = "live";
  std::string endpoint;
  std::string model;
  std::string mock_script;
  std::string config_file;
  std::string cache_dir;  // empty = not given on the command line
  bool no_cache = false;
};

constexpr const char* kDefaultCacheDir = ".labwatch_cache";

void add_provider_flags(CLI::App* cmd, ProviderOptions& opts) {
  cmd->add_option("--provider", opts.provider, "Provider backend: live or mock")
      ->check(CLI::IsMember({"live", "mock"}));
  cmd->add_option("--endpoint", opts.endpoint, "Chat-completions endpoint URL");
  cmd->add_option("--model", opts.model, "Model name");
  cmd->add_option("--mock-script", opts.mock_script, "Mock provider script (JSON)");
  cmd->add_option("--config", opts.config_file, "Provider defaults file (JSON)");
  cmd->add_option("--cache-dir", opts.cache_dir, "Response cache directory");
  cmd->add_flag("--no-cache", opts.no_cache, "Disable the response cache");
}

// Provider defaults: built-in < config file < command-line flags. The
// credential always comes from the environment.
labwatch::VlmClient make_client(const ProviderOptions& opts) {
  labwatch::ProviderConfig config;
  std::string cache_dir = kDefaultCacheDir;
  if (!opts.config_file.empty()) {
    std::string text = labwatch::read_text_file(opts.config_file);
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      labwatch::fail(ErrorKind::Config, std::string("malformed config file: ") + e.what());
    }
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      if (it.key() == "endpoint")
        config.endpoint_url = it->get<std::string>();
      else if (it.key() == "model")
        config.model_name = it->get<std::string>();
      else if (it.key() == "temperature")
        config.temperature = it->get<double>();
      else if (it.key() == "max_output_tokens")
        config.max_output_tokens = it->get<int>();
      else if (it.key() == "timeout_s")
        config.timeout_s = it->get<double>();
      else if (it.key() == "max_retries")
        config.max_retries = it->get<int>();
      else if (it.key() == "backoff_base_s")
        config.backoff_base_s = it->get<double>();
      else if (it.key() == "credential_env")
        config.credential_env_name = it->get<std::string>();
      else if (it.key() == "cache_dir")
        cache_dir = it->get<std::string>();
      else
        labwatch::fail(ErrorKind::Config, "unknown key \"" + it.key() + "\" in config file");
    }
  }
  if (!opts.endpoint.empty()) config.endpoint_url = opts.endpoint;
  if (!opts.model.empty()) config.model_name = opts.model;
  if (!opts.cache_dir.empty()) cache_dir = opts.cache_dir;

  std::shared_ptr<labwatch::Provider> provider;
  if (opts.provider == "mock") {
    if (opts.mock_script.empty())
      provider = std::make_shared<labwatch::MockProvider>();
    else
      provider = labwatch::MockProvider::from_script(
          labwatch::read_text_file(opts.mock_script));
  } else {
    provider = std::make_shared<labwatch::HttpProvider>(config);
  }

  std::optional<fs::path> cache;
  if (!opts.no_cache && !cache_dir.empty()) cache = fs::path(cache_dir);
  return labwatch::VlmClient(config, std::move(provider), cache);
}

int map_error(const Error& e, bool provider_context) {
  switch (e.kind()) {
    case ErrorKind::NotFound: return 2;
    case ErrorKind::MissingContent: return 3;
    case ErrorKind::Config: return kExitUsage;
    case ErrorKind::Provider:
    case ErrorKind::Network:
    case ErrorKind::Timeout:
    case ErrorKind::Auth:
      return provider_context ? kExitProviderFailure : 1;
    default: return 1;
  }
}

int verdict_exit(labwatch::Verdict verdict) {
  switch (verdict) {
    case labwatch::Verdict::Normal: return 0;
    case labwatch::Verdict::Anomalous: return kExitAnomalous;
    case labwatch::Verdict::Uncertain: return kExitUncertain;
  }
  return kExitUncertain;
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) labwatch::fail(ErrorKind::Io, "cannot write file: " + path.string());
  out << content;
}

std::vector<labwatch::PromptLevel> parse_levels(const std::string& csv) {
  std::vector<labwatch::PromptLevel> levels;
  for (const auto& part : labwatch::detail::split(csv, ',')) {
    auto token = labwatch::detail::trim(part);
    if (token.empty()) continue;
    int value = 0;
    try {
      value = std::stoi(std::string(token));
    } catch (const std::exception&) {
      labwatch::fail(ErrorKind::Config, "invalid level \"" + std::string(token) + "\"");
    }
    levels.emplace_back(value);
  }
  if (levels.empty()) labwatch::fail(ErrorKind::Config, "no levels given");
  return levels;
}

// --- subcommand bodies ------------------------------------------------------

int cmd_validate(const std::string& workflow_path) {
  labwatch::Workflow workflow;
  try {
    workflow = labwatch::parse_workflow_json(labwatch::read_text_file(workflow_path));
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << ") in " << workflow_path << ": "
              << e.what() << "\n";
    return 1;
  }
  auto violations = labwatch::validate_workflow(workflow);
  if (violations.empty()) return 0;
  for (const auto& v : violations)
    std::cout << "violation [" << v.rule << "] " << v.message << "\n";
  return 2;
}

int cmd_render_prompt(const std::string& workflow_path, const std::string& point_id,
                      int level) {
  labwatch::Workflow workflow = labwatch::load_workflow_file(workflow_path);
  labwatch::PromptBundle bundle =
      labwatch::assemble_prompt(workflow, point_id, labwatch::PromptLevel(level));
  std::cout << "# level=" << level << " point=" << point_id
            << " hash=" << bundle.content_hash << "\n";
  std::cout << bundle.rendered;
  return 0;
}

int cmd_judge(const std::string& workflow_path, const std::string& point_id, int level,
              const std::string& image_path, const ProviderOptions& provider_opts,
              bool verbose) {
  labwatch::Workflow workflow = labwatch::load_workflow_file(workflow_path);
  labwatch::PromptBundle bundle =
      labwatch::assemble_prompt(workflow, point_id, labwatch::PromptLevel(level));
  labwatch::Observation obs = labwatch::load_observation(image_path, point_id);
  labwatch::VlmClient client = make_client(provider_opts);

  labwatch::RawResponse response;
  try {
    response = client.judge_observation(bundle, obs);
  } catch (const Error& e) {
    std::cerr << "provider failure (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return map_error(e, /*provider_context=*/true);
  }
  labwatch::Judgment judgment = labwatch::parse_judgment(response.text);
  std::cout << "verdict=" << to_string(judgment.verdict) << " rule=" << judgment.matched_rule
            << "\n";
  if (verbose && !judgment.rationale.empty()) std::cout << judgment.rationale << "\n";
  return verdict_exit(judgment.verdict);
}

int cmd_eval(const std::string& workflow_path, const std::string& manifest_path,
             const std::string& levels_csv, const ProviderOptions& provider_opts,
             int parallelism, const std::string& out_path, const std::string& mode) {
  // Level tokens are usage; everything else here is configuration (exit 1).
  std::vector<labwatch::PromptLevel> levels = parse_levels(levels_csv);
  std::vector<labwatch::EvalRecord> records;
  try {
    labwatch::Workflow workflow = labwatch::load_workflow_file(workflow_path);
    std::vector<labwatch::Sample> samples =
        labwatch::load_manifest(labwatch::read_text_file(manifest_path));
    labwatch::VlmClient client = make_client(provider_opts);
    records = labwatch::run_eval(workflow, samples, levels, client, parallelism);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return 1;
  }
  write_text_file(out_path, labwatch::write_records_jsonl(records));
  std::cout << "wrote " << records.size() << " records to " << out_path << "\n\n";

  if (mode == "population" || mode == "both")
    std::cout << labwatch::render_report_table(labwatch::compute_metrics_by_level(
                     records, labwatch::MetricsMode::PopulationRelative))
              << "\n";
  if (mode == "class" || mode == "both")
    std::cout << labwatch::render_report_table(labwatch::compute_metrics_by_level(
                     records, labwatch::MetricsMode::ClassConditional))
              << "\n";
  return 0;
}

int cmd_report(const std::string& results_path, const std::string& mode,
               const std::string& out_path) {
  std::vector<labwatch::EvalRecord> records =
      labwatch::load_records_jsonl(labwatch::read_text_file(results_path));
  if (records.empty()) labwatch::fail(ErrorKind::Io, "no records in " + results_path);
  if (mode == "population" || mode == "both")
    std::cout << labwatch::render_report_table(labwatch::compute_metrics_by_level(
                     records, labwatch::MetricsMode::PopulationRelative))
              << "\n";
  if (mode == "class" || mode == "both")
    std::cout << labwatch::render_report_table(labwatch::compute_metrics_by_level(
                     records, labwatch::MetricsMode::ClassConditional))
              << "\n";
  if (!out_path.empty())
    write_text_file(out_path, labwatch::report_document(records).dump(2) + "\n");
  return 0;
}

int cmd_monitor(const std::string& workflow_path, const std::string& images_dir, int level,
                bool halt_on_anomaly, const ProviderOptions& provider_opts) {
  labwatch::Workflow workflow = labwatch::load_workflow_file(workflow_path);
  labwatch::VlmClient client = make_client(provider_opts);
  labwatch::MonitorOptions options{labwatch::PromptLevel(level), halt_on_anomaly};

  std::unique_ptr<labwatch::ImageSource> source;
  if (images_dir.empty())
    source = std::make_unique<labwatch::StreamImageSource>(std::cin);
  else
    source = std::make_unique<labwatch::DirectoryImageSource>(images_dir);

  labwatch::MonitorResult result =
      labwatch::run_monitor(workflow, *source, client, options, std::cout);
  return result.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Process anomaly detection for laboratory workflows via vision-language models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "labwatch 0.1.0");

  std::string workflow_path, manifest_path, point_id, image_path, results_path;
  std::string levels_csv = "1,2,3,4";
  std::string out_path = "results.jsonl";
  std::string report_out;
  std::string mode = "population";
  std::string images_dir;
  int level = 0;
  int monitor_level = 2;
  int parallelism = 4;
  bool verbose = false;
  bool halt_on_anomaly = false;
  ProviderOptions judge_provider, eval_provider, monitor_provider;

  auto* validate = app.add_subcommand("validate", "Check a workflow file against its invariants");
  validate->add_option("--workflow", workflow_path, "Workflow file (JSON)")->required();

  auto* render = app.add_subcommand("render-prompt", "Print the assembled prompt for a point");
  render->add_option("--workflow", workflow_path, "Workflow file (JSON)")->required();
  render->add_option("--point", point_id, "Monitoring point id")->required();
  render->add_option("--level", level, "Prompt level 1..4")->required();

  auto* judge = app.add_subcommand("judge", "Judge one observation at one monitoring point");
  judge->add_option("--workflow", workflow_path, "Workflow file (JSON)")->required();
  judge->add_option("--point", point_id, "Monitoring point id")->required();
  judge->add_option("--level", level, "Prompt level 1..4")->required();
  judge->add_option("--image", image_path, "Observation image (JPEG or binary PPM)")->required();
  judge->add_flag("--verbose", verbose, "Also print the model's reasoning");
  add_provider_flags(judge, judge_provider);

  auto* eval = app.add_subcommand("eval", "Run a benchmark manifest across prompt levels");
  eval->add_option("--workflow", workflow_path, "Workflow file (JSON)")->required();
  eval->add_option("--manifest", manifest_path, "Sample manifest (JSON lines)")->required();
  eval->add_option("--levels", levels_csv, "Comma-separated prompt levels (default 1,2,3,4)");
  eval->add_option("--parallelism", parallelism, "Concurrent in-flight requests")
      ->check(CLI::PositiveNumber);
  eval->add_option("--out", out_path, "Results file to write (JSON lines)");
  eval->add_option("--mode", mode, "Metrics table mode: population, class, or both")
      ->check(CLI::IsMember({"population", "class", "both"}));
  add_provider_flags(eval, eval_provider);

  auto* report = app.add_subcommand("report", "Render metric tables from a results file");
  report->add_option("results", results_path, "Results file (JSON lines)")->required();
  report->add_option("--mode", mode, "Metrics table mode: population, class, or both")
      ->check(CLI::IsMember({"population", "class", "both"}));
  report->add_option("--out", report_out, "Write the machine-readable report (JSON)");

  auto* monitor = app.add_subcommand("monitor", "Walk the checkpoint queue sequentially");
  monitor->add_option("--workflow", workflow_path, "Workflow file (JSON)")->required();
  monitor->add_option("--images", images_dir,
                      "Directory of images in lexical order (default: paths on stdin)");
  monitor->add_option("--level", monitor_level, "Prompt level 1..4 (default 2)");
  monitor->add_flag("--halt-on-anomaly", halt_on_anomaly, "Stop with exit 10 on an anomaly");
  add_provider_flags(monitor, monitor_provider);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (validate->parsed()) return cmd_validate(workflow_path);
    if (render->parsed()) return cmd_render_prompt(workflow_path, point_id, level);
    if (judge->parsed())
      return cmd_judge(workflow_path, point_id, level, image_path, judge_provider, verbose);
    if (eval->parsed())
      return cmd_eval(workflow_path, manifest_path, levels_csv, eval_provider, parallelism,
                      out_path, mode);
    if (report->parsed()) return cmd_report(results_path, mode, report_out);
    if (monitor->parsed())
      return cmd_monitor(workflow_path, images_dir, monitor_level, halt_on_anomaly,
                         monitor_provider);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.kind()) << "): " << e.what() << "\n";
    return map_error(e, /*provider_context=*/false);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
