#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <fstream>
#include <set>
#include <thread>

#include "advdoodle/service/http.hpp"
#include "advdoodle/service/service.hpp"
#include "support.hpp"

using namespace advdoodle;
using namespace advdoodle::service;
using namespace testing_support;
namespace fs = std::filesystem;

namespace {

// One 16x16 bright grey image, the darkness model, and two stored attacks:
// one that fools it (four bars), one parked just off the canvas.
struct Fixture {
  fs::path root;
  store::AttackFile fooling, harmless;

  static ControlPointSet bars(int curves, bool on_canvas) {
    ControlPointSet v(curves, 4);
    for (int l = 0; l < curves; ++l)
      for (int n = 0; n < 4; ++n)
        v.at(l, n) = on_canvas ? Vec2{-2.0 + 20.0 * n / 3.0, 2.5 + 3.0 * l} : Vec2{40.0 + n, 40.0};
    return v;
  }

  explicit Fixture(const std::string& name, bool logs = true) : root(scratch_dir(name)) {
    fs::create_directories(root / "data" / "grey");
    store::write_png(root / "data" / "grey" / "img_0.png", flat_image(16, 0.8, 0));
    AttackConfig cfg;
    cfg.curves = 4;
    AttackRecord rec;
    rec.success = true;
    rec.best_v = bars(4, true);
    rec.s_min = 0.1;
    fooling = store::make_attack_file(rec, cfg, "grey/img_0.png", 1, {16, 16}, "dark");
    rec.best_v = bars(1, false);
    cfg.curves = 1;
    harmless = store::make_attack_file(rec, cfg, "grey/img_0.png", 1, {16, 16}, "dark");
    log_dir = logs ? root / "logs" : fs::path{};
  }

  fs::path log_dir;

  ServiceConfig config() const {
    ServiceConfig c;
    c.dataset_root = root / "data";
    c.preprocess = {16, 16};
    c.class_names = {"bright", "dark"};
    c.log_dir = log_dir;
    c.max_body_bytes = 64 * 1024;
    return c;
  }

  DoodleService make() const {
    std::map<std::string, tinynet::Model<float>> models;
    models.emplace("dark", darkness_model(16, 0.8, 0.05));
    return DoodleService(config(), std::move(models), {{"fool", fooling}, {"none", harmless}});
  }
};

std::string create(DoodleService& svc, const std::string& attack) {
  const auto r = svc.create_session(json{{"attack", attack}}.dump());
  EXPECT_EQ(r.status, 201) << r.body;
  return json::parse(r.body).at("id").get<std::string>();
}

json strokes_body(const std::vector<Stroke>& strokes) {
  json arr = json::array();
  for (const auto& s : strokes) arr.push_back(to_json(s));
  return json{{"strokes", arr}};
}

}  // namespace

TEST(Service, EmptyStrokesGiveCleanClassification) {
  const Fixture f("svc_empty");
  auto svc = f.make();
  const auto id = create(svc, "fool");
  const auto r = svc.submit_strokes(id, R"({"strokes": []})");
  ASSERT_EQ(r.status, 200) << r.body;
  const auto out = json::parse(r.body).at("outcome");
  const auto model = darkness_model(16, 0.8, 0.05);
  const auto probs = model.forward(flat_image(16, 0.8, 0));
  EXPECT_EQ(out["predicted_class_id"], 1);
  EXPECT_EQ(out["predicted_class"], "bright");
  EXPECT_FALSE(out["fooled"].get<bool>());
  EXPECT_EQ(out["confidence_s"].get<double>(), static_cast<double>(probs[0]));
}

TEST(Service, TracingTheReferenceReproducesTheComputerOutcome) {
  const Fixture f("svc_self");
  auto svc = f.make();
  const auto model = darkness_model(16, 0.8, 0.05);
  const auto x = flat_image(16, 0.8, 0);
  for (const auto* ref : {&f.fooling, &f.harmless}) {
    const auto id = create(svc, ref == &f.fooling ? "fool" : "none");
    const auto strokes = strokes_from_control_points(*ref->best_v, ref->canvas, ref->config.raster);
    const auto r = svc.submit_strokes(id, strokes_body(strokes).dump());
    ASSERT_EQ(r.status, 200) << r.body;
    const auto got = outcome_from_json(json::parse(r.body).at("outcome"));
    // The computer attack's own outcome under the identity transform.
    const auto xd = doodle(x, *ref->best_v, AffineParams::identity(canvas_center(x.canvas())), ref->config.raster);
    const auto probs = model.forward(xd);
    EXPECT_EQ(got.predicted, tinynet::argmax<float>(probs));
    EXPECT_EQ(got.fooled, ref == &f.fooling);
    for (std::size_t k = 0; k < probs.size(); ++k) EXPECT_NEAR(got.probabilities[k], probs[k], 1e-5);
  }
}

TEST(Service, ClassificationIsTheLibraryPathBitForBit) {
  const Fixture f("svc_bits");
  auto svc = f.make();
  const auto id = create(svc, "fool");
  Rng rng(3);
  const auto model = darkness_model(16, 0.8, 0.05);
  const auto x = flat_image(16, 0.8, 0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Stroke> strokes(1 + trial % 3);
    for (auto& s : strokes) {
      const int n = 2 + static_cast<int>(rng.below(6));
      for (int i = 0; i < n; ++i) s.points.push_back({rng.uniform(), rng.uniform()});
    }
    const auto r = svc.submit_strokes(id, strokes_body(strokes).dump());
    ASSERT_EQ(r.status, 200);
    const auto got = outcome_from_json(json::parse(r.body).at("outcome"));
    // Library path: denormalize, rasterize polylines, composite, forward.
    std::vector<Polyline> lines;
    for (const auto& s : strokes) {
      Polyline line;
      for (const auto& p : s.points) line.vertices.push_back({p.x * 16, p.y * 16});
      lines.push_back(line);
    }
    const auto probs = model.forward(composite(x, rasterize_polylines(lines, {16, 16}, {})));
    ASSERT_EQ(got.probabilities.size(), probs.size());
    for (std::size_t k = 0; k < probs.size(); ++k) EXPECT_EQ(got.probabilities[k], static_cast<double>(probs[k]));
  }
}

TEST(Service, SessionStateImageAndReference) {
  const Fixture f("svc_state");
  auto svc = f.make();
  const auto id = create(svc, "fool");
  const auto st = svc.get_session(id);
  ASSERT_EQ(st.status, 200);
  const auto j = json::parse(st.body);
  EXPECT_EQ(j["class_id"], 1);
  EXPECT_EQ(j["class_name"], "bright");
  EXPECT_EQ(j["stroke_width"], 1.5);  // the attack's width
  EXPECT_TRUE(j["submissions"].empty());
  EXPECT_EQ(svc.get_session(id).body, st.body);  // reads are idempotent

  const auto img = svc.get_image(id);
  EXPECT_EQ(img.content_type, "image/png");
  const auto decoded = store::decode_png(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(img.body.data()), img.body.size()));
  EXPECT_EQ(decoded.height, 16);

  const auto ref = svc.get_reference(id);
  EXPECT_EQ(ref.content_type, "image/svg+xml");
  EXPECT_EQ(store::parse_svg_curves(ref.body).size(), 4u);

  const auto wide = svc.create_session(R"({"attack": "fool", "stroke_width": 3})");
  EXPECT_EQ(json::parse(wide.body)["stroke_width"], 3.0);
}

TEST(Service, ErrorsMapToStatusCodes) {
  const Fixture f("svc_errors");
  auto svc = f.make();
  EXPECT_EQ(svc.get_session("nope").status, 404);
  EXPECT_EQ(svc.get_image("nope").status, 404);
  EXPECT_EQ(svc.submit_strokes("nope", R"({"strokes": []})").status, 404);
  EXPECT_EQ(svc.create_session(R"({"attack": "missing"})").status, 404);
  EXPECT_EQ(svc.create_session(R"({"attack": "fool", "color": "red"})").status, 400);
  EXPECT_EQ(svc.create_session("{").status, 400);

  const auto id = create(svc, "fool");
  const std::vector<std::string> bad = {
      R"({"strokes": [{"points": [[0.1, 0.1]]}]})",                      // one point
      R"({"strokes": [{"points": [[0.1, 0.1], [0.2, "x"]]}]})",          // not a number
      R"({"strokes": [{"points": [[0.1, 0.1], [1e400, 0.2]]}]})",        // number overflow
      R"({"strokes": [{"points": [[0.1, 0.1], [0.2, 0.2]], "width_px": -1}]})",
      R"({"strokes": [{"points": [[0.1, 0.1], [0.2, 0.2]], "pressure": 1}]})",
      R"({"strokes": [{"points": [[0.1, 0.1], [90, 0.2]]}]})",           // far outside
      R"({"lines": []})",
      R"([1, 2])",
  };
  for (const auto& body : bad) {
    const auto r = svc.submit_strokes(id, body);
    EXPECT_EQ(r.status, 400) << body << " -> " << r.body;
    EXPECT_TRUE(json::parse(r.body).contains("error"));
  }
  const std::string huge(70 * 1024, ' ');
  EXPECT_EQ(svc.submit_strokes(id, huge).status, 413);
  // Nothing above was recorded.
  EXPECT_TRUE(json::parse(svc.get_session(id).body)["submissions"].empty());
}

TEST(Service, ConcurrentSubmissionsAreAllRecordedInReceiptOrder) {
  const Fixture f("svc_concurrent");
  auto svc = f.make();
  const auto id = create(svc, "fool");
  const int threads = 4, per_thread = 10;
  std::vector<std::thread> pool;
  std::atomic<int> ok{0};
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (int i = 0; i < per_thread; ++i) {
        const double y = 0.05 + 0.9 * (t * per_thread + i) / (threads * per_thread);
        const auto body = json{{"strokes", {{{"points", {{0.0, y}, {1.0, y}}}}}}}.dump();
        ok += svc.submit_strokes(id, body).status == 200;
      }
    });
  for (auto& th : pool) th.join();
  EXPECT_EQ(ok.load(), threads * per_thread);
  const auto subs = json::parse(svc.get_session(id).body)["submissions"];
  ASSERT_EQ(subs.size(), static_cast<std::size_t>(threads * per_thread));
  for (std::size_t i = 0; i < subs.size(); ++i) {
    EXPECT_EQ(subs[i]["seq"], static_cast<int>(i) + 1);
    if (i) {
      EXPECT_GE(subs[i]["received_at"].get<std::string>(), subs[i - 1]["received_at"].get<std::string>());
    }
  }
  // Two sessions do not share history.
  const auto other = create(svc, "fool");
  EXPECT_TRUE(json::parse(svc.get_session(other).body)["submissions"].empty());
}

TEST(Service, ReplayingTheLogReproducesEveryOutcome) {
  const Fixture f("svc_replay");
  auto svc = f.make();
  const auto id = create(svc, "fool");
  Rng rng(4);
  for (int i = 0; i < 12; ++i) {
    std::vector<Stroke> strokes(1);
    for (int k = 0; k < 4; ++k) strokes[0].points.push_back({rng.uniform(), rng.uniform()});
    if (i % 3 == 0) strokes[0].width_px = 2.5;
    ASSERT_EQ(svc.submit_strokes(id, strokes_body(strokes).dump()).status, 200);
  }
  ASSERT_EQ(svc.submit_strokes(id, R"({"strokes": [{"points": [[0.5, 0.5]]}]})").status, 400);
  const auto path = svc.log_path(id);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 13);  // created + 12 submissions
  const auto r = svc.replay_log(path);
  EXPECT_EQ(r.submissions, 12);
  EXPECT_EQ(r.mismatches, 0);

  // A tampered outcome is caught.
  std::ifstream src(path);
  std::ofstream dst(f.root / "tampered.jsonl");
  bool first = true;
  while (std::getline(src, line)) {
    auto j = json::parse(line);
    if (j["event"] == "submission" && first) {
      j["outcome"]["confidence_s"] = 0.123;
      first = false;
    }
    dst << j.dump() << "\n";
  }
  dst.close();
  EXPECT_EQ(svc.replay_log(f.root / "tampered.jsonl").mismatches, 1);
}

TEST(Service, StrokesCoverageGroupsWidths) {
  const std::vector<Stroke> same = {{{{0.1, 0.2}, {0.9, 0.2}}, 1.5}, {{{0.1, 0.7}, {0.9, 0.6}}, 1.5}};
  std::vector<Polyline> lines;
  for (const auto& s : same) {
    Polyline l;
    for (auto p : s.points) l.vertices.push_back({p.x * 20, p.y * 20});
    lines.push_back(l);
  }
  EXPECT_EQ(strokes_coverage(same, {20, 20}, {}).values, rasterize_polylines(lines, {20, 20}, {}).values);
  auto mixed = same;
  mixed[1].width_px = 3.0;
  const auto a = strokes_coverage(std::span(mixed).subspan(0, 1), {20, 20}, {});
  const auto b = strokes_coverage(std::span(mixed).subspan(1, 1), {20, 20}, {});
  const auto both = strokes_coverage(mixed, {20, 20}, {});
  for (std::size_t i = 0; i < both.values.size(); ++i)
    EXPECT_NEAR(both.values[i], 1 - (1 - a.values[i]) * (1 - b.values[i]), 1e-15);
}

TEST(Http, RoundTripOverLocalhost) {
  const Fixture f("svc_http");
  auto svc = f.make();
  httplib::Server server;
  mount_routes(server, svc);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto created = client.Post("/sessions", R"({"attack": "fool"})", "application/json");
  ASSERT_TRUE(created);
  EXPECT_EQ(created->status, 201);
  const auto id = json::parse(created->body)["id"].get<std::string>();

  auto img = client.Get("/sessions/" + id + "/image");
  ASSERT_TRUE(img);
  EXPECT_EQ(img->status, 200);
  EXPECT_EQ(img->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(img->body, svc.get_image(id).body);

  auto ref = client.Get("/sessions/" + id + "/reference");
  ASSERT_TRUE(ref);
  EXPECT_EQ(ref->body, svc.get_reference(id).body);

  const auto strokes = strokes_from_control_points(*f.fooling.best_v, {16, 16}, {});
  auto sub = client.Post("/sessions/" + id + "/strokes", strokes_body(strokes).dump(), "application/json");
  ASSERT_TRUE(sub);
  EXPECT_EQ(sub->status, 200);
  EXPECT_TRUE(json::parse(sub->body)["outcome"]["fooled"].get<bool>());

  auto st = client.Get("/sessions/" + id);
  ASSERT_TRUE(st);
  EXPECT_EQ(json::parse(st->body)["submissions"].size(), 1u);

  auto missing = client.Get("/sessions/zzz");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  auto no_route = client.Get("/elsewhere");
  ASSERT_TRUE(no_route);
  EXPECT_EQ(no_route->status, 404);
  auto bad = client.Post("/sessions/" + id + "/strokes", R"({"strokes": [{"points": []}]})", "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  auto huge = client.Post("/sessions/" + id + "/strokes", std::string(100 * 1024, ' '), "application/json");
  if (huge) {
    EXPECT_EQ(huge->status, 413);
  }

  server.stop();
  worker.join();
}
