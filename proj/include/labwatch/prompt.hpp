#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "labwatch/detail/sha256.hpp"
#include "labwatch/detail/strings.hpp"
#include "labwatch/error.hpp"
#include "labwatch/workflow.hpp"

namespace labwatch {

// Prompt granularity. Each level adds one section on top of the previous one:
//   1: experiment context only
//   2: + stage description
//   3: + detection content
//   4: + anomaly label description
class PromptLevel {
 public:
  static constexpr int kMin = 1;
  static constexpr int kMax = 4;

  explicit PromptLevel(int value) : value_(value) {
    if (value < kMin || value > kMax)
      fail(ErrorKind::Config,
           "prompt level must be between 1 and 4, got " + std::to_string(value));
  }

  int value() const noexcept { return value_; }

  bool operator==(const PromptLevel&) const = default;
  auto operator<=>(const PromptLevel&) const = default;

 private:
  int value_;
};

enum class SectionKind {
  ExperimentContext,
  StageDescription,
  DetectionContent,
  AnomalyLabelDescription,
};

inline std::string_view section_heading(SectionKind kind) {
  switch (kind) {
    case SectionKind::ExperimentContext: return "Experiment Context";
    case SectionKind::StageDescription: return "Stage Description";
    case SectionKind::DetectionContent: return "Detection Content";
    case SectionKind::AnomalyLabelDescription: return "Anomaly Label Description";
  }
  return "";
}

struct PromptSection {
  SectionKind kind;
  std::string heading;
  std::string body;

  bool operator==(const PromptSection&) const = default;
};

// Output of prompt assembly. Immutable value; `rendered` is a deterministic
// function of (sections, instruction) and `content_hash` of `rendered`.
struct PromptBundle {
  PromptLevel level;
  std::vector<PromptSection> sections;
  std::string instruction;
  std::string rendered;
  std::string content_hash;
};

// The step-by-step reasoning directive appended to every prompt. Held constant
// across levels so that level effects are attributable to the sections alone;
// the fixed terminal line is what the response parser keys on.
inline constexpr std::string_view kReasoningInstruction =
    "Analyze the image step by step against the information above. End with "
    "one line: 'Conclusion: anomaly detected.' or 'Conclusion: no anomaly "
    "detected.' If you cannot decide, end with 'Conclusion: uncertain.'";

// Which sections a given level includes, in rendering order.
inline std::vector<SectionKind> phi_select(PromptLevel level) {
  static constexpr SectionKind all[] = {
      SectionKind::ExperimentContext,
      SectionKind::StageDescription,
      SectionKind::DetectionContent,
      SectionKind::AnomalyLabelDescription,
  };
  return {all, all + level.value()};
}

// Single paragraph naming, in order: operator, target object, source,
// destination, and the action list.
inline std::string render_stage_description(const MetaStep& step) {
  std::string out = step.operator_name + " performs the stage \"" + step.name +
                    "\" on " + step.target_object + ", from " + step.source_location +
                    " to " + step.destination_location + ". Actions: " +
                    detail::join(step.actions, "; ") + ".";
  return out;
}

inline std::string render_detection_content(const DetectionTarget& target) {
  return "Check whether " + target.object + " is " + target.expected_state + ".";
}

// Abnormal side first; it is the mandatory one. An empty normal side renders
// only the abnormal clause.
inline std::string render_anomaly_label(const AnomalyLabelDescription& label) {
  std::string out = "Abnormal when: " + label.abnormal_condition;
  if (!label.normal_condition.empty()) out += "\nNormal when: " + label.normal_condition;
  return out;
}

namespace detail {

inline void require_content(bool ok, SectionKind kind, std::string_view field) {
  if (!ok)
    fail(ErrorKind::MissingContent,
         std::string("section \"") + std::string(section_heading(kind)) +
             "\" requires non-empty " + std::string(field));
}

}  // namespace detail

// Assemble the prompt for one monitoring point at one granularity level.
// Section bodies are byte-identical across the levels that share them.
inline PromptBundle assemble_prompt(const Workflow& w, std::string_view point_id,
                                    PromptLevel level) {
  PointBinding binding = resolve_point(w, point_id);
  const MetaStep& step = binding.step;
  const MonitoringPoint& point = binding.point;

  PromptBundle bundle{level, {}, std::string(kReasoningInstruction), "", ""};
  for (SectionKind kind : phi_select(level)) {
    std::string body;
    switch (kind) {
      case SectionKind::ExperimentContext:
        detail::require_content(!detail::trim(w.context.text).empty(), kind, "context text");
        body = w.context.text;
        break;
      case SectionKind::StageDescription:
        detail::require_content(!detail::trim(step.operator_name).empty(), kind, "operator");
        detail::require_content(!detail::trim(step.name).empty(), kind, "step name");
        detail::require_content(!detail::trim(step.target_object).empty(), kind,
                                "target object");
        detail::require_content(!detail::trim(step.source_location).empty(), kind,
                                "source location");
        detail::require_content(!detail::trim(step.destination_location).empty(), kind,
                                "destination location");
        detail::require_content(!step.actions.empty(), kind, "actions");
        body = render_stage_description(step);
        break;
      case SectionKind::DetectionContent:
        detail::require_content(!detail::trim(point.detection.object).empty(), kind,
                                "detection object");
        detail::require_content(!detail::trim(point.detection.expected_state).empty(), kind,
                                "expected state");
        body = render_detection_content(point.detection);
        break;
      case SectionKind::AnomalyLabelDescription:
        detail::require_content(!detail::trim(point.anomaly_label.abnormal_condition).empty(),
                                kind, "abnormal condition");
        body = render_anomaly_label(point.anomaly_label);
        break;
    }
    bundle.sections.push_back(
        {kind, std::string(section_heading(kind)), std::move(body)});
  }

  std::string rendered;
  for (const auto& section : bundle.sections) {
    rendered += section.heading;
    rendered += ":\n";
    rendered += section.body;
    rendered += "\n\n";
  }
  rendered += bundle.instruction;
  rendered += "\n";
  bundle.rendered = std::move(rendered);
  bundle.content_hash = detail::sha256_hex(bundle.rendered);
  return bundle;
}

}  // namespace labwatch
