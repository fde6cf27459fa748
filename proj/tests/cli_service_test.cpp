#include <gtest/gtest.h>

#include <chrono>
#include <thread>

#include "csnerf/http_server.hpp"
#include "csnerf/pipeline.hpp"
#include "csnerf/service.hpp"
#include "pipeline_fixture.hpp"

using namespace csnerf;
using csnerf::testing::TinyDataset;
namespace fs = std::filesystem;

namespace {

const char* kRequest = R"({"pose": {"position": [-6, -2, 1.6], "yaw": 0.0, "pitch": 0.1},
                           "width": 24, "height": 18, "seed": 3})";
// Above trip000's path (x = -3.98, running along y), looking steeply down
// it, so the marker strip lies about 2 m ahead.
const char* kMarkerRequest = R"({"pose": {"position": [-3.98, 3, 1.6], "yaw": -1.5708, "pitch": 0.9},
                                 "width": 24, "height": 18, "markers_on": true, "trajectory_id": "trip000"})";

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    data_ = new TinyDataset(csnerf::testing::make_tiny_dataset("csnerf_cli_service_test"));
    work_ = data_->dir / "work";
    result_ = new pipeline::PipelineResult(pipeline::run_pipeline(data_->manifest, data_->config, work_));
  }
  static void TearDownTestSuite() {
    fs::remove_all(data_->dir);
    delete result_;
    delete data_;
  }

  static service::RenderService make_service() {
    return service::RenderService(service::setup_from_output(io::read_manifest(data_->manifest), data_->config, work_));
  }

  static TinyDataset* data_;
  static fs::path work_;
  static pipeline::PipelineResult* result_;
};

TinyDataset* Pipeline::data_ = nullptr;
fs::path Pipeline::work_;
pipeline::PipelineResult* Pipeline::result_ = nullptr;

}  // namespace

TEST(Manifest, RoundTrip) {
  const auto d = csnerf::testing::make_tiny_dataset("csnerf_manifest_rt");
  const auto m = io::read_manifest(d.manifest);
  const fs::path copy = d.dir / "copy.json";
  io::write_manifest(copy, m);
  const auto back = io::read_manifest(copy);
  EXPECT_EQ(io::to_json(back), io::to_json(m));
  EXPECT_EQ(back.images.size(), 16u);
  EXPECT_EQ(back.cameras.size(), 2u);
  fs::remove_all(d.dir);
}

TEST(Manifest, MissingMaskNamesTheImage) {
  const auto d = csnerf::testing::make_tiny_dataset("csnerf_manifest_mask");
  const auto m = io::read_manifest(d.manifest);
  const auto& e = m.images.at(1);
  fs::remove(m.root / e.mask);
  try {
    io::load_image(m, e);
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& err) {
    EXPECT_NE(std::string(err.what()).find(e.id), std::string::npos);
    EXPECT_NE(std::string(err.what()).find("mask"), std::string::npos);
  }
  fs::remove_all(d.dir);
}

TEST(Config, JsonRoundTripAndPartialUpdate) {
  io::Config c;
  c.train.lambda_depth = 0.2;
  c.field.grid_resolutions = {4, 9};
  io::Config back;
  io::update_from_json(back, io::to_json(c));
  EXPECT_EQ(io::to_json(back), io::to_json(c));
  io::Config partial;
  io::update_from_json(partial, nlohmann::json::parse(R"({"train": {"iterations": 7}})"));
  EXPECT_EQ(partial.train.iterations, 7);
  EXPECT_EQ(partial.train.batch_rays, TrainConfig{}.batch_rays);
  EXPECT_THROW(io::update_from_json(partial, nlohmann::json::parse(R"({"train": {"iterations": "x"}})")),
               FormatError);
}

TEST_F(Pipeline, ProducesCheckpointTraceAndMetrics) {
  ASSERT_FALSE(result_->trained.empty());
  EXPECT_EQ(result_->report.records.size(), 12u);
  for (const auto& t : result_->trained) {
    EXPECT_TRUE(fs::exists(pipeline::checkpoint_path(work_, t.block)));
    EXPECT_TRUE(fs::exists(pipeline::block_dir(work_, t.block) / "trace.tsv"));
    EXPECT_EQ(t.result.losses.size(), 6u);
  }
  ASSERT_GE(result_->metrics.size(), 2u);
  EXPECT_EQ(result_->metrics.back().name, "all");
  EXPECT_GT(result_->metrics.back().depth.count, 0u);
  EXPECT_TRUE(fs::exists(pipeline::metrics_file(work_)));
}

TEST_F(Pipeline, InfoAndTrajectories) {
  auto svc = make_service();
  const auto info = svc.handle_info();
  ASSERT_EQ(info.status, 200);
  const auto j = nlohmann::json::parse(info.body);
  EXPECT_EQ(j.at("block").get<int>(), result_->trained.front().block);
  EXPECT_EQ(j.at("seed").get<int>(), 1);
  EXPECT_EQ(j.at("sequences").size(), 4u);
  EXPECT_EQ(j.at("intrinsics").at("width").get<int>(), 32);
  EXPECT_EQ(info.headers.at("X-Seed"), "1");

  const auto tr = svc.handle_trajectories();
  ASSERT_EQ(tr.status, 200);
  const auto t = nlohmann::json::parse(tr.body);
  ASSERT_EQ(t.at("trajectories").size(), 2u);
  EXPECT_EQ(t.at("trajectories")[0].at("id").get<std::string>(), "trip000");
  EXPECT_EQ(t.at("trajectories")[0].at("points").size(), 3u);
}

TEST_F(Pipeline, RenderErrors) {
  auto svc = make_service();
  EXPECT_EQ(svc.handle_render(R"({"pose": {"position": [0,0,1.6]}, "block": 999})").status, 404);
  EXPECT_EQ(svc.handle_render("{not json").status, 400);
  EXPECT_EQ(svc.handle_render(R"({"width": 4})").status, 400);
  EXPECT_EQ(svc.handle_render(R"({"pose": {"position": [0,0,1.6]}, "markers_on": true, "trajectory_id": "nope"})")
                .status,
            404);
  EXPECT_EQ(svc.handle_render(
                R"({"pose": {"position": [0,0,1.6]}, "appearance_key": {"trip": "nope", "camera": 0}})")
                .status,
            404);
  const auto r = svc.handle_render(R"({"pose": {"position": [0,0,1.6]}, "block": 999})");
  EXPECT_EQ(nlohmann::json::parse(r.body).at("error").get<std::string>(), "NotFound");
}

TEST_F(Pipeline, RenderIsDeterministicAndMarkersTint) {
  auto svc = make_service();
  const auto a = svc.handle_render(kRequest);
  const auto b = svc.handle_render(kRequest);
  ASSERT_EQ(a.status, 200);
  EXPECT_EQ(a.content_type, "image/png");
  EXPECT_EQ(a.body, b.body);
  EXPECT_EQ(a.headers.at("X-Seed"), "3");
  EXPECT_TRUE(a.headers.count("X-Render-Ms"));
  const auto m = svc.handle_render(kMarkerRequest);
  ASSERT_EQ(m.status, 200);
  EXPECT_GT(std::stoi(m.headers.at("X-Tinted-Pixels")), 0);
}

#ifdef CSNERF_CLI_PATH
TEST_F(Pipeline, CliRenderMatchesServiceBytes) {
  using csnerf::testing::run_cli;
  const fs::path req = data_->dir / "req.json", png = data_->dir / "cli.png";
  for (const char* body : {kRequest, kMarkerRequest}) {
    std::ofstream(req) << body;
    ASSERT_EQ(run_cli("render " + csnerf::testing::cli_common(*data_, work_) + " -r \"" + req.string() + "\" -o \"" +
                      png.string() + "\""),
              0);
    auto svc = make_service();
    EXPECT_EQ(csnerf::testing::read_bytes(png), svc.handle_render(body).body);
  }
}

TEST_F(Pipeline, CliTrainTwiceGivesIdenticalCheckpoints) {
  using csnerf::testing::run_cli;
  const std::string common = csnerf::testing::cli_common(*data_, work_);
  const int block = result_->trained.front().block;
  const fs::path ckpt = pipeline::checkpoint_path(work_, block);
  const std::string before = csnerf::testing::read_bytes(ckpt);
  ASSERT_EQ(run_cli("train " + common + " --block " + std::to_string(block)), 0);
  const std::string first = csnerf::testing::read_bytes(ckpt);
  ASSERT_EQ(run_cli("train " + common + " --block " + std::to_string(block)), 0);
  EXPECT_EQ(csnerf::testing::read_bytes(ckpt), first);
  // The in-process pipeline run used the same seed and config.
  EXPECT_EQ(first, before);
  ASSERT_EQ(run_cli("train " + common + " --block " + std::to_string(block) + " --seed 9"), 0);
  EXPECT_NE(csnerf::testing::read_bytes(ckpt), first);
  ASSERT_EQ(run_cli("train " + common + " --block " + std::to_string(block)), 0);
}

TEST(Cli, FailsCleanlyOnMissingManifest) {
  EXPECT_NE(csnerf::testing::run_cli("select -m /nonexistent/manifest.json -w /tmp/csnerf_nothing"), 0);
  EXPECT_NE(csnerf::testing::run_cli("no-such-command"), 0);
}
#endif

TEST_F(Pipeline, HttpEndpoints) {
  auto svc = make_service();
  httplib::Server server;
  service::bind_routes(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  const auto info = client.Get("/info");
  ASSERT_TRUE(info);
  EXPECT_EQ(info->status, 200);
  EXPECT_EQ(info->get_header_value("Access-Control-Allow-Origin"), "*");
  EXPECT_EQ(nlohmann::json::parse(info->body).at("seed").get<int>(), 1);

  const auto traj = client.Get("/trajectories");
  ASSERT_TRUE(traj);
  EXPECT_EQ(traj->status, 200);
  EXPECT_EQ(nlohmann::json::parse(traj->body).at("trajectories").size(), 2u);

  const auto render = client.Post("/render", kRequest, "application/json");
  ASSERT_TRUE(render);
  EXPECT_EQ(render->status, 200);
  EXPECT_EQ(render->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(render->body, svc.handle_render(kRequest).body);
  EXPECT_FALSE(render->get_header_value("X-Block-Id").empty());

  const auto missing = client.Post("/render", R"({"pose": {"position": [0,0,1]}, "block": 42})", "application/json");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);

  server.stop();
  th.join();
}
