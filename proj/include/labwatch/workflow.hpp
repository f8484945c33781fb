#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "labwatch/detail/strings.hpp"
#include "labwatch/error.hpp"

namespace labwatch {

// Declarative description of an experiment run: background context, the
// ordered stages a robot executes, and the monitoring points where a camera
// observation is judged against an expected scene state.

struct ExperimentContext {
  std::string text;

  bool operator==(const ExperimentContext&) const = default;
};

struct MetaStep {
  std::string id;
  std::string name;
  std::string operator_name;
  std::string target_object;
  std::string source_location;
  std::string destination_location;
  std::vector<std::string> actions;

  bool operator==(const MetaStep&) const = default;
};

// Whether a point is checked before the step starts or after it completes.
enum class Phase { PreStep, PostStep };

inline const char* to_string(Phase phase) {
  return phase == Phase::PreStep ? "pre" : "post";
}

struct DetectionTarget {
  std::string object;
  std::string expected_state;

  bool operator==(const DetectionTarget&) const = default;
};

struct AnomalyLabelDescription {
  std::string normal_condition;  // may be empty; some points define only the abnormal side
  std::string abnormal_condition;

  bool operator==(const AnomalyLabelDescription&) const = default;
};

struct MonitoringPoint {
  std::string id;
  std::string step_id;
  Phase phase = Phase::PostStep;
  DetectionTarget detection;
  AnomalyLabelDescription anomaly_label;
  std::optional<std::string> camera_hint;

  bool operator==(const MonitoringPoint&) const = default;
};

struct Workflow {
  ExperimentContext context;
  std::vector<MetaStep> steps;
  std::vector<MonitoringPoint> points;

  bool operator==(const Workflow&) const = default;

  const MetaStep* find_step(std::string_view id) const {
    for (const auto& s : steps)
      if (s.id == id) return &s;
    return nullptr;
  }

  const MonitoringPoint* find_point(std::string_view id) const {
    for (const auto& p : points)
      if (p.id == id) return &p;
    return nullptr;
  }
};

// One violated invariant; validation returns these instead of throwing so a
// defective document can be reported in full.
struct Violation {
  std::string subject_id;  // offending step/point id, or a field name
  std::string rule;        // short machine-readable rule name
  std::string message;
  ErrorKind kind = ErrorKind::Constraint;

  bool operator==(const Violation&) const = default;
};

namespace detail {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline void reject_unknown_keys(const ordered_json& obj,
                                const std::set<std::string>& allowed,
                                const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key()))
      fail(ErrorKind::Constraint, "unknown key \"" + it.key() + "\" in " + where);
  }
}

inline const ordered_json& require_key(const ordered_json& obj, const char* key,
                                       const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end())
    fail(ErrorKind::Constraint, "missing key \"" + std::string(key) + "\" in " + where);
  return *it;
}

inline std::string require_string(const ordered_json& obj, const char* key,
                                  const std::string& where) {
  const auto& v = require_key(obj, key, where);
  if (!v.is_string())
    fail(ErrorKind::Constraint, "key \"" + std::string(key) + "\" in " + where + " must be a string");
  return v.get<std::string>();
}

}  // namespace detail

// Structural parse of the workflow document. Enforces the schema (required
// keys, value types, no unknown keys) but not the cross-reference and
// uniqueness invariants; those are validate_workflow's job, so a defective
// but well-formed document can still be loaded for diagnosis.
inline Workflow parse_workflow_json(const std::string& text) {
  namespace dj = detail;
  dj::ordered_json doc;
  try {
    doc = dj::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::Syntax, std::string("malformed workflow document: ") + e.what());
  }
  if (!doc.is_object()) fail(ErrorKind::Syntax, "workflow document must be a JSON object");
  dj::reject_unknown_keys(doc, {"context", "steps", "points"}, "workflow document");

  Workflow w;
  w.context.text = dj::require_string(doc, "context", "workflow document");

  const auto& steps = dj::require_key(doc, "steps", "workflow document");
  if (!steps.is_array()) fail(ErrorKind::Constraint, "\"steps\" must be an array");
  for (size_t i = 0; i < steps.size(); ++i) {
    const auto& s = steps[i];
    std::string where = "steps[" + std::to_string(i) + "]";
    if (!s.is_object()) fail(ErrorKind::Constraint, where + " must be an object");
    dj::reject_unknown_keys(s,
                            {"id", "name", "operator", "target_object", "source_location",
                             "destination_location", "actions"},
                            where);
    MetaStep step;
    step.id = dj::require_string(s, "id", where);
    step.name = dj::require_string(s, "name", where);
    step.operator_name = dj::require_string(s, "operator", where);
    step.target_object = dj::require_string(s, "target_object", where);
    step.source_location = dj::require_string(s, "source_location", where);
    step.destination_location = dj::require_string(s, "destination_location", where);
    const auto& actions = dj::require_key(s, "actions", where);
    if (!actions.is_array()) fail(ErrorKind::Constraint, where + ".actions must be an array");
    for (const auto& a : actions) {
      if (!a.is_string())
        fail(ErrorKind::Constraint, where + ".actions entries must be strings");
      step.actions.push_back(a.get<std::string>());
    }
    w.steps.push_back(std::move(step));
  }

  if (auto it = doc.find("points"); it != doc.end()) {
    if (!it->is_array()) fail(ErrorKind::Constraint, "\"points\" must be an array");
    for (size_t i = 0; i < it->size(); ++i) {
      const auto& p = (*it)[i];
      std::string where = "points[" + std::to_string(i) + "]";
      if (!p.is_object()) fail(ErrorKind::Constraint, where + " must be an object");
      dj::reject_unknown_keys(
          p, {"id", "step_id", "phase", "detection", "anomaly_label", "camera_hint"}, where);
      MonitoringPoint point;
      point.id = dj::require_string(p, "id", where);
      point.step_id = dj::require_string(p, "step_id", where);
      if (p.contains("phase")) {
        std::string phase = dj::require_string(p, "phase", where);
        if (phase == "pre")
          point.phase = Phase::PreStep;
        else if (phase == "post")
          point.phase = Phase::PostStep;
        else
          fail(ErrorKind::Constraint,
               where + ".phase must be \"pre\" or \"post\", got \"" + phase + "\"");
      }
      const auto& det = dj::require_key(p, "detection", where);
      if (!det.is_object()) fail(ErrorKind::Constraint, where + ".detection must be an object");
      dj::reject_unknown_keys(det, {"object", "expected_state"}, where + ".detection");
      point.detection.object = dj::require_string(det, "object", where + ".detection");
      point.detection.expected_state =
          dj::require_string(det, "expected_state", where + ".detection");
      const auto& label = dj::require_key(p, "anomaly_label", where);
      if (!label.is_object())
        fail(ErrorKind::Constraint, where + ".anomaly_label must be an object");
      dj::reject_unknown_keys(label, {"normal", "abnormal"}, where + ".anomaly_label");
      point.anomaly_label.abnormal_condition =
          dj::require_string(label, "abnormal", where + ".anomaly_label");
      if (label.contains("normal"))
        point.anomaly_label.normal_condition =
            dj::require_string(label, "normal", where + ".anomaly_label");
      if (p.contains("camera_hint"))
        point.camera_hint = dj::require_string(p, "camera_hint", where);
      w.points.push_back(std::move(point));
    }
  }
  return w;
}

// Pure invariant check; identical inputs yield identical violation lists.
inline std::vector<Violation> validate_workflow(const Workflow& w) {
  std::vector<Violation> out;
  auto add = [&out](std::string subject, std::string rule, std::string message,
                    ErrorKind kind = ErrorKind::Constraint) {
    out.push_back({std::move(subject), std::move(rule), std::move(message), kind});
  };

  if (detail::trim(w.context.text).empty())
    add("context", "context-non-empty", "experiment context text is empty");
  if (w.steps.empty()) add("steps", "steps-non-empty", "workflow has no steps");

  std::set<std::string> seen_ids;
  for (const auto& step : w.steps) {
    if (step.id.empty()) add(step.id, "step-id-non-empty", "step has an empty id");
    if (!seen_ids.insert(step.id).second)
      add(step.id, "id-unique", "duplicate step id \"" + step.id + "\"");
    if (step.actions.empty())
      add(step.id, "actions-non-empty", "step \"" + step.id + "\" has an empty actions list");
  }
  for (const auto& point : w.points) {
    if (point.id.empty()) add(point.id, "point-id-non-empty", "point has an empty id");
    if (!seen_ids.insert(point.id).second)
      add(point.id, "id-unique",
          "point id \"" + point.id + "\" collides with another step or point id");
    if (!w.find_step(point.step_id))
      add(point.id, "step-ref-resolves",
          "point \"" + point.id + "\" references unknown step \"" + point.step_id + "\"",
          ErrorKind::Reference);
    if (detail::trim(point.detection.object).empty())
      add(point.id, "detection-object-non-empty",
          "point \"" + point.id + "\" has an empty detection object");
    if (detail::trim(point.detection.expected_state).empty())
      add(point.id, "detection-state-non-empty",
          "point \"" + point.id + "\" has an empty expected state");
    if (detail::trim(point.anomaly_label.abnormal_condition).empty())
      add(point.id, "abnormal-condition-non-empty",
          "point \"" + point.id + "\" has an empty abnormal condition");
  }
  return out;
}

// Parse + validate; throws on the first violation class encountered.
inline Workflow load_workflow(const std::string& text) {
  Workflow w = parse_workflow_json(text);
  auto violations = validate_workflow(w);
  if (!violations.empty()) {
    std::string message = "workflow invalid:";
    for (const auto& v : violations) message += "\n  [" + v.rule + "] " + v.message;
    fail(violations.front().kind, message);
  }
  return w;
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline Workflow load_workflow_file(const std::filesystem::path& path) {
  return load_workflow(read_text_file(path));
}

// Canonical serialization; load(serialize(w)) == w structurally.
inline std::string serialize_workflow(const Workflow& w) {
  nlohmann::ordered_json doc;
  doc["context"] = w.context.text;
  doc["steps"] = nlohmann::ordered_json::array();
  for (const auto& step : w.steps) {
    nlohmann::ordered_json s;
    s["id"] = step.id;
    s["name"] = step.name;
    s["operator"] = step.operator_name;
    s["target_object"] = step.target_object;
    s["source_location"] = step.source_location;
    s["destination_location"] = step.destination_location;
    s["actions"] = step.actions;
    doc["steps"].push_back(std::move(s));
  }
  doc["points"] = nlohmann::ordered_json::array();
  for (const auto& point : w.points) {
    nlohmann::ordered_json p;
    p["id"] = point.id;
    p["step_id"] = point.step_id;
    p["phase"] = to_string(point.phase);
    p["detection"] = {{"object", point.detection.object},
                      {"expected_state", point.detection.expected_state}};
    nlohmann::ordered_json label;
    if (!point.anomaly_label.normal_condition.empty())
      label["normal"] = point.anomaly_label.normal_condition;
    label["abnormal"] = point.anomaly_label.abnormal_condition;
    p["anomaly_label"] = std::move(label);
    if (point.camera_hint) p["camera_hint"] = *point.camera_hint;
    doc["points"].push_back(std::move(p));
  }
  return doc.dump(2) + "\n";
}

struct PointBinding {
  const MetaStep& step;
  const MonitoringPoint& point;
};

inline PointBinding resolve_point(const Workflow& w, std::string_view point_id) {
  const MonitoringPoint* point = w.find_point(point_id);
  if (!point)
    fail(ErrorKind::NotFound, "unknown monitoring point \"" + std::string(point_id) + "\"");
  const MetaStep* step = w.find_step(point->step_id);
  if (!step)
    fail(ErrorKind::Reference, "point \"" + std::string(point_id) +
                                   "\" references unknown step \"" + point->step_id + "\"");
  return {*step, *point};
}

}  // namespace labwatch
