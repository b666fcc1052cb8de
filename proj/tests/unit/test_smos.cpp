#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "eva/config.hpp"
#include "eva/io.hpp"
#include "eva/metrics.hpp"
#include "eva/smos.hpp"
#include "fixtures.hpp"

using namespace eva;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  std::string dir = testing::temp_dir("smos");
  std::string data = dir + "/data";
  std::string ref = dir + "/ref.wav", gen = dir + "/gen.wav";

  Fixture() {
    fs::create_directories(data);
    wav_write(ref, testing::sine(8000, 440, 0.1));
    wav_write(gen, testing::sine(8000, 441, 0.1));
  }
  ~Fixture() { fs::remove_all(dir); }

  json session(std::size_t n, const std::string& id = "", std::vector<std::string> labels = {"sysA"}) const {
    json pairs = json::array();
    for (std::size_t i = 0; i < n; ++i) {
      pairs.push_back({{"pair_id", "p" + std::to_string(i)},
                       {"ref_path", ref},
                       {"gen_path", gen},
                       {"system_label", labels[i % labels.size()]}});
    }
    json j{{"pairs", pairs}};
    if (!id.empty()) j["id"] = id;
    return j;
  }
};

json rating(const std::string& session, const std::string& pair, const std::string& rater, int score) {
  return {{"session_id", session}, {"pair_id", pair}, {"rater_id", rater}, {"score", score}, {"listen_complete", true}};
}

// Independent Fisher-Yates with the documented seeding.
std::vector<std::size_t> oracle_order(std::uint64_t seed, const std::string& rater, std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  std::mt19937_64 rng(seed ^ fnv1a64(rater));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(v[i], v[rng() % (i + 1)]);
  return v;
}

}  // namespace

TEST_CASE("rater order is a seeded permutation per rater") {
  const auto a = smos::rater_order(42, "alice", 50), b = smos::rater_order(42, "bob", 50);
  CHECK(a == oracle_order(42, "alice", 50));
  CHECK(b == oracle_order(42, "bob", 50));
  CHECK(a != b);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
  CHECK(smos::rater_order(42, "alice", 50) == a);
}

TEST_CASE("session creation validates its manifest") {
  Fixture f;
  smos::Service s({f.data});
  auto r = s.create_session(f.session(100));
  REQUIRE(r.status == 201);
  CHECK(r.body.at("pairs") == 100);
  CHECK(fs::exists(f.data + "/" + r.body.at("id").get<std::string>() + "/session.json"));

  auto missing = f.session(2);
  missing["pairs"][1]["gen_path"] = f.dir + "/nope.wav";
  r = s.create_session(missing);
  CHECK(r.status == 422);
  CHECK(r.body.dump().find("nope.wav") != std::string::npos);

  auto dup = f.session(2);
  dup["pairs"][1]["pair_id"] = "p0";
  CHECK(s.create_session(dup).status == 422);
  CHECK(s.create_session(json{{"pairs", json::array()}}).status == 422);
  CHECK(s.create_session(json::array()).status == 400);
  CHECK(s.create_session(f.session(1, "fixed")).status == 201);
  CHECK(s.create_session(f.session(1, "fixed")).status == 409);

  std::ofstream(f.dir + "/bad.wav") << "garbage";
  auto bad = f.session(1);
  bad["pairs"][0]["ref_path"] = f.dir + "/bad.wav";
  CHECK(s.create_session(bad).status == 422);
}

TEST_CASE("next pair follows the rater's order and hides the system") {
  Fixture f;
  smos::Service s({f.data});
  REQUIRE(s.create_session(f.session(6, "s", {"secret-system-x"})).status == 201);
  const auto seed = fnv1a64("s");
  const auto order = oracle_order(seed, "alice", 6);
  auto n = s.next_pair("s", "alice");
  REQUIRE(n.status == 200);
  CHECK(n.body.at("pair_id") == "p" + std::to_string(order[0]));
  CHECK(n.body.at("done") == false);
  CHECK(n.body.dump().find("secret-system-x") == std::string::npos);
  CHECK(n.body.at("sample_url").get<std::string>().find("/audio/") == 0);

  // Lowest coverage first: once alice has rated a pair, bob avoids it.
  REQUIRE(s.submit_rating(rating("s", n.body.at("pair_id"), "alice", 4)).status == 201);
  const auto bob_order = oracle_order(seed, "bob", 6);
  std::string expected;
  for (auto idx : bob_order) {
    if ("p" + std::to_string(idx) != n.body.at("pair_id")) {
      expected = "p" + std::to_string(idx);
      break;
    }
  }
  CHECK(s.next_pair("s", "bob").body.at("pair_id") == expected);

  for (int i = 0; i < 5; ++i) {
    const auto next = s.next_pair("s", "alice");
    REQUIRE(next.body.at("done") == false);
    CHECK(s.submit_rating(rating("s", next.body.at("pair_id"), "alice", 3)).status == 201);
  }
  const auto done = s.next_pair("s", "alice");
  CHECK(done.body.at("done") == true);
  CHECK(done.body.at("progress") == 1.0);
  CHECK(s.next_pair("s", "").status == 400);
  CHECK(s.next_pair("zzz", "alice").status == 404);
}

TEST_CASE("rating validation") {
  Fixture f;
  smos::Service s({f.data});
  REQUIRE(s.create_session(f.session(2, "s")).status == 201);
  CHECK(s.submit_rating(rating("s", "p0", "a", 6)).status == 400);
  CHECK(s.submit_rating(rating("s", "p0", "a", 0)).status == 400);
  auto fractional = rating("s", "p0", "a", 3);
  fractional["score"] = 3.5;
  CHECK(s.submit_rating(fractional).status == 400);
  auto partial = rating("s", "p0", "a", 3);
  partial["listen_complete"] = false;
  CHECK(s.submit_rating(partial).status == 400);
  auto no_rater = rating("s", "p0", "", 3);
  CHECK(s.submit_rating(no_rater).status == 400);
  CHECK(s.submit_rating(rating("s", "p9", "a", 3)).status == 404);
  CHECK(s.submit_rating(rating("nope", "p0", "a", 3)).status == 404);
  CHECK(s.submit_rating(rating("s", "p0", "a", 3)).status == 201);
  CHECK(s.submit_rating(rating("s", "p0", "a", 5)).status == 409);
  CHECK(s.rating_count("s") == 1);

  smos::Service lenient({f.dir + "/lenient", true});
  REQUIRE(lenient.create_session(f.session(1, "s")).status == 201);
  CHECK(lenient.submit_rating(partial).status == 201);
}

TEST_CASE("report aggregates per system") {
  Fixture f;
  smos::Service s({f.data});
  REQUIRE(s.create_session(f.session(4, "s", {"a", "b"})).status == 201);
  auto empty = s.report("s");
  REQUIRE(empty.status == 200);
  REQUIRE(empty.body.at("systems").size() == 2);
  for (const auto& row : empty.body.at("systems")) {
    CHECK(row.at("count") == 0);
    CHECK(row.at("mean") == 0.0);
    CHECK(row.at("low_count") == true);
  }
  // p0 and p2 belong to system a.
  s.submit_rating(rating("s", "p0", "r1", 5));
  s.submit_rating(rating("s", "p0", "r2", 5));
  s.submit_rating(rating("s", "p2", "r1", 4));
  s.submit_rating(rating("s", "p1", "r1", 2));
  const auto rep = s.report("s").body;
  CHECK(rep.at("ratings") == 4);
  const auto& a = rep.at("systems")[0];
  CHECK(a.at("system_label") == "a");
  CHECK(a.at("mean").get<double>() == doctest::Approx(4.6667).epsilon(1e-4));
  CHECK(a.at("low_count") == false);
  CHECK(rep.at("systems")[1].at("low_count") == true);

  // The report agrees with the aggregate over the raw log.
  std::ifstream log(f.data + "/s/ratings.jsonl");
  std::vector<int> scores_a;
  for (std::string line; std::getline(log, line);) {
    const auto r = json::parse(line);
    if (r.at("pair_id") == "p0" || r.at("pair_id") == "p2") scores_a.push_back(r.at("score"));
  }
  const auto agg = smos_aggregate(scores_a);
  CHECK(a.at("mean").get<double>() == agg.mean);
  CHECK(a.at("ci95").get<double>() == agg.ci95);
  CHECK(s.report("nope").status == 404);
}

TEST_CASE("ratings survive a restart, including after a torn write") {
  Fixture f;
  {
    smos::Service s({f.data});
    REQUIRE(s.create_session(f.session(5, "s")).status == 201);
    for (int i = 0; i < 5; ++i) REQUIRE(s.submit_rating(rating("s", "p" + std::to_string(i), "r", 1 + i)).status == 201);
  }
  {
    smos::Service s({f.data});
    CHECK(s.rating_count("s") == 5);
    CHECK(s.report("s").body.at("systems")[0].at("mean") == 3.0);
    CHECK(s.submit_rating(rating("s", "p0", "r", 2)).status == 409);
  }
  // A crash mid-append leaves a partial line; it was never acknowledged.
  std::ofstream(f.data + "/s/ratings.jsonl", std::ios::app) << R"({"session_id":"s","pair_id":"p0","rat)";
  {
    smos::Service s({f.data});
    CHECK(s.rating_count("s") == 5);
    REQUIRE(s.submit_rating(rating("s", "p0", "q", 4)).status == 201);
  }
  smos::Service s({f.data});
  CHECK(s.rating_count("s") == 6);
  CHECK(s.create_session(f.session(1, "s")).status == 409);
}

TEST_CASE("HTTP API") {
  Fixture f;
  smos::Service service({f.data});
  httplib::Server server;
  service.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);

  auto res = client.Post("/sessions", f.session(3, "web", {"hidden-label"}).dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);
  CHECK(client.Post("/sessions", "{not json", "application/json")->status == 400);

  res = client.Get("/sessions/web/next?rater=alice");
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Cache-Control") == "no-store");
  CHECK(res->body.find("hidden-label") == std::string::npos);
  const auto next = json::parse(res->body);

  res = client.Get(next.at("reference_url").get<std::string>());
  REQUIRE(res);
  CHECK(res->status == 200);
  CHECK(res->get_header_value("Content-Type") == "audio/wav");
  CHECK(res->body.substr(0, 4) == "RIFF");
  CHECK(res->body.size() == fs::file_size(f.ref));
  CHECK(res->body.find("hidden-label") == std::string::npos);

  res = client.Get(next.at("sample_url").get<std::string>(), {{"Range", "bytes=0-43"}});
  REQUIRE(res);
  CHECK(res->status == 206);
  CHECK(res->body.size() == 44);
  CHECK(res->body.substr(8, 4) == "WAVE");
  CHECK(client.Get("/audio/missing/ref")->status == 404);
  CHECK(client.Get("/audio/p0/other")->status == 404);

  res = client.Post("/ratings", rating("web", next.at("pair_id"), "alice", 4).dump(), "application/json");
  REQUIRE(res);
  CHECK(res->status == 201);
  CHECK(client.Post("/ratings", rating("web", next.at("pair_id"), "alice", 4).dump(), "application/json")->status ==
        409);
  CHECK(client.Post("/ratings", rating("web", "p1", "alice", 6).dump(), "application/json")->status == 400);

  res = client.Get("/sessions/web/report");
  REQUIRE(res);
  CHECK(res->status == 200);
  const auto rep = json::parse(res->body);
  CHECK(rep.at("ratings") == 1);
  CHECK(rep.at("systems")[0].at("system_label") == "hidden-label");
  CHECK(client.Get("/sessions/none/report")->status == 404);

  server.stop();
  thread.join();
}

TEST_CASE("session document from a manifest") {
  Fixture f;
  std::ofstream(f.dir + "/m.txt") << "# ref gen system\nref.wav gen.wav evagan\nref.wav gen.wav hifigan  # trailing\n";
  const auto j = smos::session_from_manifest(f.dir + "/m.txt");
  REQUIRE(j.at("pairs").size() == 2);
  CHECK(j.at("pairs")[0].at("pair_id") == "pair-0001");
  CHECK(fs::path(j.at("pairs")[1].at("gen_path").get<std::string>()).is_absolute());
  CHECK(j.at("pairs")[1].at("system_label") == "hifigan");
  smos::Service s({f.data});
  CHECK(s.create_session(j).status == 201);
  std::ofstream(f.dir + "/bad.txt") << "ref.wav gen.wav\n";
  CHECK_THROWS(smos::session_from_manifest(f.dir + "/bad.txt"));
}
