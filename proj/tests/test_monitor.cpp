#include <catch2/catch.hpp>

#include <sstream>

#include "labwatch/monitor.hpp"
#include "test_support.hpp"

using namespace labwatch;
namespace ts = test_support;

namespace {

struct MonitorHarness {
  ts::TempDir tmp;
  Workflow workflow = ts::demo_workflow();

  std::vector<std::string> images(size_t count) {
    std::vector<std::string> paths;
    for (size_t i = 0; i < count; ++i) {
      auto p = tmp.path / ("frame_" + std::to_string(i) + ".ppm");
      ts::write_file(p, ts::gradient_ppm(640, 480, static_cast<unsigned>(i)));
      paths.push_back(p.string());
    }
    return paths;
  }
};

class ListImageSource : public ImageSource {
 public:
  explicit ListImageSource(std::vector<std::string> paths) : paths_(std::move(paths)) {}
  std::optional<std::string> next() override {
    if (index_ >= paths_.size()) return std::nullopt;
    return paths_[index_++];
  }

 private:
  std::vector<std::string> paths_;
  size_t index_ = 0;
};

VlmClient normal_client(std::shared_ptr<MockProvider>& mock_out) {
  auto mock = MockProvider::from_script(
      R"({"default": "Conclusion: no anomaly detected."})");
  mock_out = mock;
  ProviderConfig config;
  config.backoff_base_s = 0;
  return VlmClient(config, mock);
}

}  // namespace

TEST_CASE("checkpoint queue follows workflow order with pre before post") {
  Workflow w = ts::silicone_workflow();
  auto queue = checkpoint_queue(w);
  REQUIRE(queue.size() == 20);
  CHECK(queue[0].point->id == "p01");  // pre-step check of stage 1
  CHECK(queue[0].point->phase == Phase::PreStep);
  CHECK(queue[1].point->id == "p02");
  CHECK(queue[1].point->phase == Phase::PostStep);
  CHECK(queue[2].point->id == "p03");
  // Step order is respected globally.
  size_t last_step_index = 0;
  for (const auto& checkpoint : queue) {
    size_t step_index = 0;
    for (; step_index < w.steps.size(); ++step_index)
      if (w.steps[step_index].id == checkpoint.step->id) break;
    CHECK(step_index >= last_step_index);
    last_step_index = step_index;
  }
}

TEST_CASE("two-checkpoint session with normal verdicts") {
  MonitorHarness harness;
  std::shared_ptr<MockProvider> mock;
  VlmClient client = normal_client(mock);
  ListImageSource source(harness.images(2));
  std::ostringstream log;
  MonitorResult result =
      run_monitor(harness.workflow, source, client, MonitorOptions{}, log);
  CHECK(result.exit_code == 0);
  CHECK_FALSE(result.halted);
  REQUIRE(result.log.size() == 2);
  CHECK(result.log[0].point_id == "before-transfer");
  CHECK(result.log[1].point_id == "after-transfer");
  CHECK(result.log[0].verdict == Verdict::Normal);
  CHECK(result.log[1].verdict == Verdict::Normal);
  std::string text = log.str();
  size_t occurrences = 0;
  for (size_t at = text.find("no anomaly"); at != std::string::npos;
       at = text.find("no anomaly", at + 1))
    ++occurrences;
  CHECK(occurrences == 2);
  CHECK(mock->calls() == 2);
}

TEST_CASE("halt on anomaly stops after the offending checkpoint") {
  MonitorHarness harness;
  auto mock = MockProvider::from_script(R"({
    "default": "Conclusion: no anomaly detected.",
    "rules": [{"point_id": "after-transfer", "respond": "Conclusion: anomaly detected."}]
  })");
  ProviderConfig config;
  config.backoff_base_s = 0;
  VlmClient client(config, mock);
  ListImageSource source(harness.images(2));
  std::ostringstream log;
  MonitorOptions options;
  options.halt_on_anomaly = true;
  MonitorResult result = run_monitor(harness.workflow, source, client, options, log);
  CHECK(result.exit_code == 10);
  CHECK(result.halted);
  CHECK(result.log.size() == 2);
  CHECK(mock->calls() == 2);
  CHECK(log.str().find("ALERT") != std::string::npos);
}

TEST_CASE("without the halt flag an anomaly is logged and the session continues") {
  MonitorHarness harness;
  auto mock = MockProvider::from_script(R"({
    "default": "Conclusion: no anomaly detected.",
    "rules": [{"point_id": "before-transfer", "respond": "Conclusion: anomaly detected."}]
  })");
  ProviderConfig config;
  config.backoff_base_s = 0;
  VlmClient client(config, mock);
  ListImageSource source(harness.images(2));
  std::ostringstream log;
  MonitorResult result =
      run_monitor(harness.workflow, source, client, MonitorOptions{}, log);
  CHECK(result.exit_code == 0);
  CHECK(result.log.size() == 2);
  CHECK(log.str().find("ALERT") != std::string::npos);
}

TEST_CASE("image source underrun is an io error") {
  MonitorHarness harness;
  std::shared_ptr<MockProvider> mock;
  VlmClient client = normal_client(mock);
  ListImageSource source(harness.images(1));
  std::ostringstream log;
  try {
    run_monitor(harness.workflow, source, client, MonitorOptions{}, log);
    FAIL("expected underrun");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Io);
    CHECK(std::string(e.what()).find("underrun") != std::string::npos);
  }
}

TEST_CASE("provider failures at a checkpoint degrade to uncertain") {
  MonitorHarness harness;
  auto mock = MockProvider::from_script(R"({
    "default": "Conclusion: no anomaly detected.",
    "rules": [{"point_id": "before-transfer", "fail": true}]
  })");
  ProviderConfig config;
  config.backoff_base_s = 0;
  config.max_retries = 0;
  VlmClient client(config, mock);
  ListImageSource source(harness.images(2));
  std::ostringstream log;
  MonitorResult result =
      run_monitor(harness.workflow, source, client, MonitorOptions{}, log);
  CHECK(result.exit_code == 0);
  REQUIRE(result.log.size() == 2);
  CHECK(result.log[0].verdict == Verdict::Uncertain);
  CHECK(result.log[0].error.has_value());
  CHECK(result.log[1].verdict == Verdict::Normal);
}

TEST_CASE("directory image source yields lexical order") {
  ts::TempDir tmp;
  ts::write_file(tmp.path / "b.ppm", ts::gradient_ppm(8, 8, 1));
  ts::write_file(tmp.path / "a.ppm", ts::gradient_ppm(8, 8, 2));
  ts::write_file(tmp.path / "c.ppm", ts::gradient_ppm(8, 8, 3));
  DirectoryImageSource source(tmp.path);
  CHECK(source.next()->find("a.ppm") != std::string::npos);
  CHECK(source.next()->find("b.ppm") != std::string::npos);
  CHECK(source.next()->find("c.ppm") != std::string::npos);
  CHECK_FALSE(source.next().has_value());
  CHECK_THROWS_AS(DirectoryImageSource(tmp.path / "nope"), Error);
}

TEST_CASE("stream image source reads newline-delimited paths") {
  std::istringstream in("one.ppm\n\n  two.ppm  \n");
  StreamImageSource source(in);
  CHECK(source.next() == "one.ppm");
  CHECK(source.next() == "two.ppm");
  CHECK_FALSE(source.next().has_value());
}

TEST_CASE("points sharing a (step, phase) slot are visited in declaration order") {
  Workflow w = ts::demo_workflow();
  MonitoringPoint extra = w.points[0];
  extra.id = "before-transfer-side-view";
  extra.camera_hint = "overhead camera";
  w.points.push_back(extra);  // same step, same pre phase as before-transfer
  REQUIRE(validate_workflow(w).empty());
  auto queue = checkpoint_queue(w);
  REQUIRE(queue.size() == 3);
  CHECK(queue[0].point->id == "before-transfer");
  CHECK(queue[1].point->id == "before-transfer-side-view");
  CHECK(queue[2].point->id == "after-transfer");
}
