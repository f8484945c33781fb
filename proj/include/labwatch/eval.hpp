#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "labwatch/client.hpp"
#include "labwatch/error.hpp"
#include "labwatch/parser.hpp"
#include "labwatch/prompt.hpp"
#include "labwatch/workflow.hpp"

namespace labwatch {

enum class GroundTruth { Normal, Abnormal };

inline const char* to_string(GroundTruth g) {
  return g == GroundTruth::Normal ? "normal" : "abnormal";
}

inline GroundTruth ground_truth_from_string(std::string_view s) {
  if (s == "normal") return GroundTruth::Normal;
  if (s == "abnormal") return GroundTruth::Abnormal;
  fail(ErrorKind::Constraint, "unknown ground-truth token \"" + std::string(s) + "\"");
}

struct Sample {
  std::string sample_id;
  std::string image;  // path to the observation image
  std::string point_id;
  GroundTruth ground_truth = GroundTruth::Normal;
  std::optional<std::string> device;
  std::optional<std::string> viewpoint;

  bool operator==(const Sample&) const = default;
};

// Manifest: JSON lines, one sample per line.
inline std::vector<Sample> load_manifest(const std::string& text) {
  std::vector<Sample> samples;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::Syntax,
           "manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!doc.is_object())
      fail(ErrorKind::Syntax, "manifest line " + std::to_string(line_no) + ": not an object");
    Sample sample;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      if (it.key() == "sample_id")
        sample.sample_id = it->get<std::string>();
      else if (it.key() == "image")
        sample.image = it->get<std::string>();
      else if (it.key() == "point_id")
        sample.point_id = it->get<std::string>();
      else if (it.key() == "label")
        sample.ground_truth = ground_truth_from_string(it->get<std::string>());
      else if (it.key() == "device")
        sample.device = it->get<std::string>();
      else if (it.key() == "viewpoint")
        sample.viewpoint = it->get<std::string>();
      else
        fail(ErrorKind::Constraint, "manifest line " + std::to_string(line_no) +
                                        ": unknown key \"" + it.key() + "\"");
    }
    if (sample.sample_id.empty() || sample.image.empty() || sample.point_id.empty() ||
        !doc.contains("label"))
      fail(ErrorKind::Constraint,
           "manifest line " + std::to_string(line_no) +
               ": sample_id, image, point_id, and label are required");
    if (!seen.insert(sample.sample_id).second)
      fail(ErrorKind::Constraint, "duplicate sample_id \"" + sample.sample_id + "\"");
    samples.push_back(std::move(sample));
  }
  return samples;
}

enum class Outcome { Correct, FalsePositive, MissedDetection, Uncertain };

inline const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::Correct: return "correct";
    case Outcome::FalsePositive: return "false_positive";
    case Outcome::MissedDetection: return "missed_detection";
    case Outcome::Uncertain: return "uncertain";
  }
  return "uncertain";
}

inline Outcome outcome_from_string(std::string_view s) {
  if (s == "correct") return Outcome::Correct;
  if (s == "false_positive") return Outcome::FalsePositive;
  if (s == "missed_detection") return Outcome::MissedDetection;
  if (s == "uncertain") return Outcome::Uncertain;
  fail(ErrorKind::Constraint, "unknown outcome token \"" + std::string(s) + "\"");
}

// False positive: a normal sample called anomalous. Missed detection: an
// abnormal sample called normal. Uncertain verdicts are their own channel.
inline Outcome classify_outcome(GroundTruth ground_truth, Verdict verdict) {
  if (verdict == Verdict::Uncertain) return Outcome::Uncertain;
  if (ground_truth == GroundTruth::Normal && verdict == Verdict::Anomalous)
    return Outcome::FalsePositive;
  if (ground_truth == GroundTruth::Abnormal && verdict == Verdict::Normal)
    return Outcome::MissedDetection;
  return Outcome::Correct;
}

struct EvalRecord {
  std::string sample_id;
  int level = 1;
  Verdict verdict = Verdict::Uncertain;
  Outcome outcome = Outcome::Uncertain;
  GroundTruth ground_truth = GroundTruth::Normal;
  std::string request_hash;
  double latency_s = 0.0;
  std::optional<std::string> error;

  bool operator==(const EvalRecord&) const = default;
};

// Metric denominators. Population-relative divides every count by the total
// sample count, so the four percentages partition 100. Class-conditional
// divides FPR by the ground-truth-normal count and MDR by the
// ground-truth-abnormal count.
enum class MetricsMode { PopulationRelative, ClassConditional };

inline const char* to_string(MetricsMode m) {
  return m == MetricsMode::PopulationRelative ? "population" : "class";
}

struct MetricsReport {
  int level = 1;
  MetricsMode mode = MetricsMode::PopulationRelative;
  size_t total = 0;
  size_t correct = 0;
  size_t false_positive = 0;
  size_t missed_detection = 0;
  size_t uncertain = 0;
  size_t gt_normal = 0;
  size_t gt_abnormal = 0;
  double acc = 0.0;
  double fpr = 0.0;
  double mdr = 0.0;
  double ur = 0.0;
  bool degenerate_class = false;  // a class denominator was zero
};

inline MetricsReport compute_metrics(const std::vector<EvalRecord>& records,
                                     MetricsMode mode) {
  if (records.empty()) fail(ErrorKind::Config, "compute_metrics requires records");
  MetricsReport report;
  report.level = records.front().level;
  report.mode = mode;
  report.total = records.size();
  for (const auto& r : records) {
    if (r.level != report.level)
      fail(ErrorKind::Config, "compute_metrics requires a single level per call");
    switch (r.outcome) {
      case Outcome::Correct: ++report.correct; break;
      case Outcome::FalsePositive: ++report.false_positive; break;
      case Outcome::MissedDetection: ++report.missed_detection; break;
      case Outcome::Uncertain: ++report.uncertain; break;
    }
    if (r.ground_truth == GroundTruth::Normal)
      ++report.gt_normal;
    else
      ++report.gt_abnormal;
  }
  auto pct = [](size_t num, size_t den) {
    return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
  };
  report.acc = pct(report.correct, report.total);
  report.ur = pct(report.uncertain, report.total);
  if (mode == MetricsMode::PopulationRelative) {
    report.fpr = pct(report.false_positive, report.total);
    report.mdr = pct(report.missed_detection, report.total);
  } else {
    if (report.gt_normal == 0 || report.gt_abnormal == 0) report.degenerate_class = true;
    report.fpr = pct(report.false_positive, report.gt_normal);
    report.mdr = pct(report.missed_detection, report.gt_abnormal);
  }
  return report;
}

// Group records by level (ascending) and compute one report per level.
inline std::vector<MetricsReport> compute_metrics_by_level(
    const std::vector<EvalRecord>& records, MetricsMode mode) {
  std::map<int, std::vector<EvalRecord>> by_level;
  for (const auto& r : records) by_level[r.level].push_back(r);
  std::vector<MetricsReport> reports;
  for (auto& [level, group] : by_level) reports.push_back(compute_metrics(group, mode));
  return reports;
}

// ---------------------------------------------------------------------------
// Batch evaluation
// ---------------------------------------------------------------------------

// One record per (sample, level), sorted by (level, sample_id) regardless of
// completion order. Per-sample provider failures become Uncertain records
// with an error annotation; only configuration problems abort the run.
inline std::vector<EvalRecord> run_eval(const Workflow& workflow,
                                        const std::vector<Sample>& samples,
                                        std::vector<PromptLevel> levels, VlmClient& client,
                                        int parallelism) {
  if (samples.empty()) fail(ErrorKind::Config, "run_eval requires samples");
  if (levels.empty()) fail(ErrorKind::Config, "run_eval requires at least one level");
  if (parallelism < 1) fail(ErrorKind::Config, "parallelism must be positive");
  if (auto violations = validate_workflow(workflow); !violations.empty())
    fail(ErrorKind::Config, "workflow invalid: " + violations.front().message);
  for (const auto& sample : samples)
    if (!workflow.find_point(sample.point_id))
      fail(ErrorKind::Config, "sample \"" + sample.sample_id +
                                  "\" references unknown point \"" + sample.point_id + "\"");

  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  std::vector<Sample> ordered = samples;
  std::sort(ordered.begin(), ordered.end(),
            [](const Sample& a, const Sample& b) { return a.sample_id < b.sample_id; });

  const size_t task_count = levels.size() * ordered.size();
  std::vector<EvalRecord> records(task_count);

  // Observations are shared across levels; decode each image once.
  std::mutex image_mutex;
  std::map<std::string, Observation> image_cache;
  auto observation_for = [&](const Sample& sample) {
    {
      std::lock_guard<std::mutex> lock(image_mutex);
      auto it = image_cache.find(sample.image);
      if (it != image_cache.end()) return it->second;
    }
    Observation obs = load_observation(sample.image, sample.point_id);
    std::lock_guard<std::mutex> lock(image_mutex);
    return image_cache.emplace(sample.image, std::move(obs)).first->second;
  };

  std::atomic<size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      size_t index = next.fetch_add(1, std::memory_order_relaxed);
      if (index >= task_count) return;
      const PromptLevel& level = levels[index / ordered.size()];
      const Sample& sample = ordered[index % ordered.size()];
      EvalRecord record;
      record.sample_id = sample.sample_id;
      record.level = level.value();
      record.ground_truth = sample.ground_truth;
      try {
        Observation obs = observation_for(sample);
        obs.point_id = sample.point_id;
        obs.device = sample.device;
        obs.viewpoint = sample.viewpoint;
        PromptBundle bundle = assemble_prompt(workflow, sample.point_id, level);
        RawResponse response = client.judge_observation(bundle, obs);
        Judgment judgment = parse_judgment(response.text);
        record.verdict = judgment.verdict;
        record.request_hash = response.request_hash;
        record.latency_s = response.latency_s;
      } catch (const Error& e) {
        record.verdict = Verdict::Uncertain;
        record.error = std::string(to_string(e.kind())) + ": " + e.what();
      }
      record.outcome = classify_outcome(sample.ground_truth, record.verdict);
      records[index] = std::move(record);
    }
  };

  size_t pool = std::min<size_t>(static_cast<size_t>(parallelism), task_count);
  if (pool <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    threads.reserve(pool);
    for (size_t i = 0; i < pool; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  return records;
}

// ---------------------------------------------------------------------------
// Results file (JSON lines) and report rendering
// ---------------------------------------------------------------------------

inline std::string write_records_jsonl(const std::vector<EvalRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json doc;
    doc["sample_id"] = r.sample_id;
    doc["level"] = r.level;
    doc["verdict"] = to_string(r.verdict);
    doc["outcome"] = to_string(r.outcome);
    doc["label"] = to_string(r.ground_truth);
    doc["request_hash"] = r.request_hash;
    doc["latency_s"] = r.latency_s;
    if (r.error) doc["error"] = *r.error;
    out += doc.dump();
    out += "\n";
  }
  return out;
}

inline std::vector<EvalRecord> load_records_jsonl(const std::string& text) {
  std::vector<EvalRecord> records;
  std::istringstream in(text);
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::Syntax, "results line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!doc.is_object())
      fail(ErrorKind::Syntax, "results line " + std::to_string(line_no) + ": not an object");
    try {
      EvalRecord r;
      r.sample_id = doc.at("sample_id").get<std::string>();
      r.level = doc.at("level").get<int>();
      r.verdict = verdict_from_string(doc.at("verdict").get<std::string>());
      r.outcome = outcome_from_string(doc.at("outcome").get<std::string>());
      r.ground_truth = ground_truth_from_string(doc.at("label").get<std::string>());
      r.request_hash = doc.value("request_hash", std::string());
      r.latency_s = doc.value("latency_s", 0.0);
      if (doc.contains("error")) r.error = doc["error"].get<std::string>();
      records.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::Syntax, "results line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

inline std::string mode_banner(MetricsMode mode) {
  return mode == MetricsMode::PopulationRelative
             ? "mode: population-relative (denominator: all samples)"
             : "mode: class-conditional (FPR over ground-truth normal, MDR over "
               "ground-truth abnormal)";
}

// Plain-text table, one row per level. Latency is intentionally absent.
inline std::string render_report_table(const std::vector<MetricsReport>& reports) {
  std::string out;
  if (reports.empty()) return out;
  out += mode_banner(reports.front().mode);
  out += "\n";
  out += "Level  Total     ACC     FPR     MDR      UR\n";
  std::vector<MetricsReport> rows = reports;
  std::sort(rows.begin(), rows.end(),
            [](const MetricsReport& a, const MetricsReport& b) { return a.level < b.level; });
  for (const auto& r : rows) {
    char line[160];
    std::snprintf(line, sizeof(line), "%5d  %5zu  %6.1f  %6.1f  %6.1f  %6.1f%s\n", r.level,
                  r.total, r.acc, r.fpr, r.mdr, r.ur,
                  r.degenerate_class ? "  (empty class denominator)" : "");
    out += line;
  }
  return out;
}

inline nlohmann::ordered_json report_to_json(const MetricsReport& r) {
  nlohmann::ordered_json doc;
  doc["level"] = r.level;
  doc["mode"] = to_string(r.mode);
  doc["total"] = r.total;
  doc["counts"] = {{"correct", r.correct},
                   {"false_positive", r.false_positive},
                   {"missed_detection", r.missed_detection},
                   {"uncertain", r.uncertain}};
  doc["ground_truth"] = {{"normal", r.gt_normal}, {"abnormal", r.gt_abnormal}};
  doc["acc"] = r.acc;
  doc["fpr"] = r.fpr;
  doc["mdr"] = r.mdr;
  doc["ur"] = r.ur;
  if (r.degenerate_class) doc["degenerate_class"] = true;
  return doc;
}

// Machine-readable report: both denominator modes, all levels.
inline nlohmann::ordered_json report_document(const std::vector<EvalRecord>& records) {
  nlohmann::ordered_json doc;
  doc["population"] = nlohmann::ordered_json::array();
  doc["class_conditional"] = nlohmann::ordered_json::array();
  for (const auto& r : compute_metrics_by_level(records, MetricsMode::PopulationRelative))
    doc["population"].push_back(report_to_json(r));
  for (const auto& r : compute_metrics_by_level(records, MetricsMode::ClassConditional))
    doc["class_conditional"].push_back(report_to_json(r));
  return doc;
}

}  // namespace labwatch
