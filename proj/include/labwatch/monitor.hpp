#pragma once

#include <algorithm>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "labwatch/client.hpp"
#include "labwatch/error.hpp"
#include "labwatch/parser.hpp"
#include "labwatch/prompt.hpp"
#include "labwatch/workflow.hpp"

namespace labwatch {

// One slot in the sequential checkpoint queue.
struct Checkpoint {
  const MetaStep* step = nullptr;
  const MonitoringPoint* point = nullptr;
};

// Checkpoints in execution order: workflow step order, pre-step checks before
// post-step checks within a step, declaration order among points sharing a
// slot.
inline std::vector<Checkpoint> checkpoint_queue(const Workflow& workflow) {
  std::vector<Checkpoint> queue;
  for (const auto& step : workflow.steps) {
    for (Phase phase : {Phase::PreStep, Phase::PostStep}) {
      for (const auto& point : workflow.points) {
        if (point.step_id == step.id && point.phase == phase)
          queue.push_back({&step, &point});
      }
    }
  }
  return queue;
}

// Supplies one image path per checkpoint.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual std::optional<std::string> next() = 0;
};

// Regular files of a directory in lexical order.
class DirectoryImageSource : public ImageSource {
 public:
  explicit DirectoryImageSource(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir))
      fail(ErrorKind::Io, "image directory not found: " + dir.string());
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.is_regular_file()) paths_.push_back(entry.path().string());
    std::sort(paths_.begin(), paths_.end());
  }

  std::optional<std::string> next() override {
    if (index_ >= paths_.size()) return std::nullopt;
    return paths_[index_++];
  }

 private:
  std::vector<std::string> paths_;
  size_t index_ = 0;
};

// Newline-delimited paths from a stream, so an executor can feed images as
// steps complete.
class StreamImageSource : public ImageSource {
 public:
  explicit StreamImageSource(std::istream& in) : in_(in) {}

  std::optional<std::string> next() override {
    std::string line;
    while (std::getline(in_, line)) {
      auto trimmed = detail::trim(line);
      if (!trimmed.empty()) return std::string(trimmed);
    }
    return std::nullopt;
  }

 private:
  std::istream& in_;
};

struct MonitorOptions {
  PromptLevel level{2};  // context + stage description
  bool halt_on_anomaly = false;
};

struct CheckpointLog {
  std::string point_id;
  std::string step_id;
  Phase phase = Phase::PostStep;
  Verdict verdict = Verdict::Uncertain;
  std::optional<std::string> error;
};

struct MonitorResult {
  std::vector<CheckpointLog> log;
  bool halted = false;
  int exit_code = 0;
};

// Walk the checkpoint queue, judging one observation per checkpoint. On an
// anomalous verdict an alert line is emitted; with halt_on_anomaly the
// session stops there with exit code 10. An exhausted image source before
// the queue ends is an Io error (underrun).
inline MonitorResult run_monitor(const Workflow& workflow, ImageSource& images,
                                 VlmClient& client, const MonitorOptions& options,
                                 std::ostream& out) {
  std::vector<Checkpoint> queue = checkpoint_queue(workflow);
  MonitorResult result;
  size_t index = 0;
  for (const Checkpoint& checkpoint : queue) {
    ++index;
    std::optional<std::string> image_path = images.next();
    if (!image_path)
      fail(ErrorKind::Io, "image source underrun: checkpoint " + std::to_string(index) +
                              " of " + std::to_string(queue.size()) +
                              " has no image (point \"" + checkpoint.point->id + "\")");
    CheckpointLog entry;
    entry.point_id = checkpoint.point->id;
    entry.step_id = checkpoint.step->id;
    entry.phase = checkpoint.point->phase;
    try {
      Observation obs = load_observation(*image_path, checkpoint.point->id);
      PromptBundle bundle = assemble_prompt(workflow, checkpoint.point->id, options.level);
      RawResponse response = client.judge_observation(bundle, obs);
      entry.verdict = parse_judgment(response.text).verdict;
    } catch (const Error& e) {
      entry.verdict = Verdict::Uncertain;
      entry.error = std::string(to_string(e.kind())) + ": " + e.what();
    }

    out << "checkpoint " << index << "/" << queue.size() << " point=" << entry.point_id
        << " step=" << entry.step_id << " phase=" << to_string(entry.phase)
        << " verdict=" << to_string(entry.verdict);
    if (entry.verdict == Verdict::Normal)
      out << " - no anomaly detected";
    else if (entry.verdict == Verdict::Uncertain)
      out << " - needs manual review";
    if (entry.error) out << " (" << *entry.error << ")";
    out << "\n";

    bool anomalous = entry.verdict == Verdict::Anomalous;
    result.log.push_back(std::move(entry));
    if (anomalous) {
      out << "ALERT: anomaly detected at point=" << checkpoint.point->id << " during stage \""
          << checkpoint.step->name << "\"\n";
      if (options.halt_on_anomaly) {
        result.halted = true;
        result.exit_code = 10;
        return result;
      }
    }
  }
  return result;
}

}  // namespace labwatch
