#include "eva/smos.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <httplib.h>

#include "eva/config.hpp"
#include "eva/io.hpp"
#include "eva/metrics.hpp"

namespace eva::smos {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string now_iso() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

Reply error(int status, const std::string& message) { return {status, json{{"error", message}}}; }

bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  for (char c : id) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') return false;
  }
  return id != "." && id != "..";
}

}  // namespace

json Session::to_json() const {
  json pj = json::array();
  for (const auto& p : pairs) {
    pj.push_back(
        {{"pair_id", p.pair_id}, {"ref_path", p.ref_path}, {"gen_path", p.gen_path}, {"system_label", p.system_label}});
  }
  return {{"id", id}, {"created_at", created_at}, {"pairs", pj}, {"seed", seed}, {"required_ratings", required_ratings}};
}

Session Session::from_json(const json& j) {
  Session s;
  s.id = j.value("id", "");
  s.created_at = j.value("created_at", "");
  s.seed = j.value("seed", std::uint64_t{0});
  s.required_ratings = j.value("required_ratings", 1);
  for (const auto& p : j.at("pairs")) {
    s.pairs.push_back({p.at("pair_id").get<std::string>(), p.at("ref_path").get<std::string>(),
                       p.at("gen_path").get<std::string>(), p.value("system_label", "")});
  }
  return s;
}

json RatingRecord::to_json() const {
  return {{"session_id", session_id}, {"pair_id", pair_id},     {"rater_id", rater_id},
          {"score", score},           {"timestamp", timestamp}, {"listen_complete", listen_complete}};
}

RatingRecord RatingRecord::from_json(const json& j) {
  RatingRecord r;
  r.session_id = j.at("session_id").get<std::string>();
  r.pair_id = j.at("pair_id").get<std::string>();
  r.rater_id = j.at("rater_id").get<std::string>();
  r.score = j.at("score").get<int>();
  r.timestamp = j.value("timestamp", "");
  r.listen_complete = j.value("listen_complete", false);
  return r;
}

std::vector<std::size_t> rater_order(std::uint64_t seed, const std::string& rater, std::size_t n) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed ^ fnv1a64(rater));
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

Service::Service(Options options) : options_(std::move(options)) {
  if (options_.data_dir.empty()) throw std::invalid_argument("smos: data dir is required");
  fs::create_directories(options_.data_dir);
  replay();
}

std::string Service::session_dir(const std::string& id) const { return (fs::path(options_.data_dir) / id).string(); }

void Service::replay() {
  for (const auto& entry : fs::directory_iterator(options_.data_dir)) {
    const auto meta = entry.path() / "session.json";
    if (!entry.is_directory() || !fs::exists(meta)) continue;
    std::ifstream in(meta);
    json j;
    in >> j;
    auto st = std::make_unique<State>();
    st->session = Session::from_json(j);
    for (std::size_t i = 0; i < st->session.pairs.size(); ++i) st->pair_index[st->session.pairs[i].pair_id] = i;
    st->coverage.assign(st->session.pairs.size(), 0);
    const auto log_path = entry.path() / "ratings.jsonl";
    std::ifstream log(log_path, std::ios::binary);
    std::string line;
    std::uintmax_t good = 0;
    bool torn = false;
    while (std::getline(log, line)) {
      const bool complete = !log.eof();
      json rj;
      try {
        if (!complete) throw std::runtime_error("no newline");
        if (!line.empty()) rj = json::parse(line);
      } catch (const std::exception&) {
        torn = true;  // torn final line from a crash; everything before it was acknowledged
        break;
      }
      good += line.size() + 1;
      if (line.empty()) continue;
      auto r = RatingRecord::from_json(rj);
      auto it = st->pair_index.find(r.pair_id);
      if (it == st->pair_index.end()) continue;
      if (!st->rated.insert({r.pair_id, r.rater_id}).second) continue;
      ++st->coverage[it->second];
      st->ratings.push_back(std::move(r));
    }
    log.close();
    // Drop the fragment so later appends start on a fresh line.
    if (torn) fs::resize_file(log_path, good);
    counter_ = std::max<std::uint64_t>(counter_, sessions_.size() + 1);
    sessions_[st->session.id] = std::move(st);
  }
}

void Service::append_line(const std::string& path, const std::string& line) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (fd < 0) throw std::runtime_error(path + ": cannot open log");
  const std::string data = line + "\n";
  std::size_t done = 0;
  while (done < data.size()) {
    const auto n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      ::close(fd);
      throw std::runtime_error(path + ": write failed");
    }
    done += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

Reply Service::create_session(const json& body) {
  if (!body.is_object() || !body.contains("pairs") || !body["pairs"].is_array()) {
    return error(400, "body must be an object with a 'pairs' array");
  }
  Session s;
  try {
    s = Session::from_json(body);
  } catch (const json::exception& e) {
    return error(400, std::string("malformed session: ") + e.what());
  }
  if (s.pairs.empty()) return error(422, "session has no pairs");
  if (s.required_ratings < 1) return error(422, "required_ratings must be at least 1");
  std::set<std::string> ids;
  for (const auto& p : s.pairs) {
    if (!valid_id(p.pair_id)) return error(422, "invalid pair_id '" + p.pair_id + "'");
    if (!ids.insert(p.pair_id).second) return error(422, "duplicate pair_id '" + p.pair_id + "'");
    for (const auto* path : {&p.ref_path, &p.gen_path}) {
      if (!fs::exists(*path)) return error(422, "missing audio file: " + *path);
      try {
        wav_read(*path);
      } catch (const std::exception& e) {
        return error(422, "unreadable audio file: " + *path + ": " + e.what());
      }
    }
  }
  std::unique_lock lock(mutex_);
  if (s.id.empty()) {
    do {
      const auto n = ++counter_;
      s.id = "s" + std::to_string(n) + "-" + hex64(fnv1a64(now_iso() + std::to_string(n))).substr(0, 8);
    } while (sessions_.count(s.id));
  } else if (!valid_id(s.id)) {
    return error(422, "invalid session id '" + s.id + "'");
  } else if (sessions_.count(s.id)) {
    return error(409, "session '" + s.id + "' already exists");
  }
  if (!body.contains("seed")) s.seed = fnv1a64(s.id);
  s.created_at = now_iso();
  fs::create_directories(session_dir(s.id));
  {
    const auto meta = fs::path(session_dir(s.id)) / "session.json";
    const auto tmp = meta.string() + ".tmp";
    std::ofstream out(tmp);
    out << s.to_json().dump(2) << "\n";
    out.close();
    fs::rename(tmp, meta);
  }
  auto st = std::make_unique<State>();
  st->session = s;
  for (std::size_t i = 0; i < s.pairs.size(); ++i) st->pair_index[s.pairs[i].pair_id] = i;
  st->coverage.assign(s.pairs.size(), 0);
  sessions_[s.id] = std::move(st);
  return {201, json{{"id", s.id}, {"pairs", s.pairs.size()}, {"seed", s.seed}, {"created_at", s.created_at}}};
}

Reply Service::next_pair(const std::string& session_id, const std::string& rater) const {
  if (rater.empty()) return error(400, "rater is required");
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) return error(404, "unknown session");
  const State& st = *it->second;
  const auto n = st.session.pairs.size();
  const auto order = rater_order(st.session.seed, rater, n);
  std::size_t done = 0;
  std::optional<std::size_t> pick;
  for (std::size_t idx : order) {
    if (st.rated.count({st.session.pairs[idx].pair_id, rater})) {
      ++done;
      continue;
    }
    if (!pick || st.coverage[idx] < st.coverage[*pick]) pick = idx;
  }
  const double progress = n == 0 ? 1.0 : static_cast<double>(done) / static_cast<double>(n);
  if (!pick) return {200, json{{"done", true}, {"progress", 1.0}}};
  const auto& p = st.session.pairs[*pick];
  const std::string q = "?session=" + session_id;
  return {200, json{{"done", false},
                    {"session_id", session_id},
                    {"pair_id", p.pair_id},
                    {"reference_url", "/audio/" + p.pair_id + "/ref" + q},
                    {"sample_url", "/audio/" + p.pair_id + "/gen" + q},
                    {"progress", progress},
                    {"rated", done},
                    {"total", n}}};
}

Reply Service::submit_rating(const json& body) {
  if (!body.is_object()) return error(400, "body must be a JSON object");
  for (const char* key : {"session_id", "pair_id", "rater_id"}) {
    if (!body.contains(key) || !body[key].is_string() || body[key].get<std::string>().empty()) {
      return error(400, std::string("missing field '") + key + "'");
    }
  }
  if (!body.contains("score") || !body["score"].is_number_integer()) return error(400, "score must be an integer");
  RatingRecord r = RatingRecord::from_json(body);
  if (r.score < 1 || r.score > 5) return error(400, "score must be in 1..5");
  if (body.contains("listen_complete") && !body["listen_complete"].is_boolean()) {
    return error(400, "listen_complete must be a boolean");
  }
  if (!r.listen_complete && !options_.allow_partial) {
    return error(400, "rating rejected: both clips must be played to the end (listen_complete)");
  }
  r.timestamp = now_iso();
  std::unique_lock lock(mutex_);
  auto it = sessions_.find(r.session_id);
  if (it == sessions_.end()) return error(404, "unknown session");
  State& st = *it->second;
  auto pit = st.pair_index.find(r.pair_id);
  if (pit == st.pair_index.end()) return error(404, "unknown pair");
  if (st.rated.count({r.pair_id, r.rater_id})) return error(409, "already rated by this rater");
  {
    std::lock_guard append(append_mutex_);
    append_line((fs::path(session_dir(r.session_id)) / "ratings.jsonl").string(), r.to_json().dump());
  }
  st.rated.insert({r.pair_id, r.rater_id});
  ++st.coverage[pit->second];
  st.ratings.push_back(r);
  return {201, json{{"ok", true}, {"pair_id", r.pair_id}}};
}

Reply Service::report(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(session_id);
  if (it == sessions_.end()) return error(404, "unknown session");
  const State& st = *it->second;
  std::map<std::string, std::vector<int>> by_system;
  std::map<std::string, std::size_t> pairs_per_system;
  for (const auto& p : st.session.pairs) {
    by_system[p.system_label];
    ++pairs_per_system[p.system_label];
  }
  for (const auto& r : st.ratings) by_system[st.session.pairs[st.pair_index.at(r.pair_id)].system_label].push_back(r.score);
  json rows = json::array();
  for (const auto& [label, scores] : by_system) {
    json row{{"system_label", label}, {"pairs", pairs_per_system[label]}, {"count", scores.size()}};
    if (scores.empty()) {
      row.update({{"mean", 0.0}, {"stddev", 0.0}, {"ci95", 0.0}});
    } else {
      const auto a = smos_aggregate(scores);
      row.update({{"mean", a.mean}, {"stddev", a.stddev}, {"ci95", a.ci95}});
    }
    row["low_count"] = scores.size() < 2;
    rows.push_back(row);
  }
  std::size_t complete = 0;
  for (int c : st.coverage) complete += c >= st.session.required_ratings ? 1 : 0;
  return {200, json{{"session_id", session_id},
                    {"ratings", st.ratings.size()},
                    {"pairs", st.session.pairs.size()},
                    {"pairs_complete", complete},
                    {"systems", rows}}};
}

std::optional<std::string> Service::audio_path(const std::string& pair_id, const std::string& role,
                                               const std::string& session_id) const {
  if (role != "ref" && role != "gen") return std::nullopt;
  std::shared_lock lock(mutex_);
  for (const auto& [id, st] : sessions_) {
    if (!session_id.empty() && id != session_id) continue;
    auto it = st->pair_index.find(pair_id);
    if (it == st->pair_index.end()) continue;
    const auto& p = st->session.pairs[it->second];
    return role == "ref" ? p.ref_path : p.gen_path;
  }
  return std::nullopt;
}

std::size_t Service::rating_count(const std::string& session_id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(session_id);
  return it == sessions_.end() ? 0 : it->second->ratings.size();
}

void Service::mount(httplib::Server& server) {
  auto send = [](httplib::Response& res, const Reply& r) {
    res.status = r.status;
    res.set_header("Cache-Control", "no-store");
    res.set_content(r.body.dump(), "application/json");
  };
  auto parse = [](const httplib::Request& req, json& out) {
    try {
      out = json::parse(req.body);
      return true;
    } catch (const json::exception&) {
      return false;
    }
  };
  server.Post("/sessions", [this, send, parse](const httplib::Request& req, httplib::Response& res) {
    json body;
    send(res, parse(req, body) ? create_session(body) : error(400, "invalid JSON"));
  });
  server.Get(R"(/sessions/([^/]+)/next)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, next_pair(req.matches[1], req.get_param_value("rater")));
  });
  server.Get(R"(/sessions/([^/]+)/report)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, report(req.matches[1]));
  });
  server.Post("/ratings", [this, send, parse](const httplib::Request& req, httplib::Response& res) {
    json body;
    send(res, parse(req, body) ? submit_rating(body) : error(400, "invalid JSON"));
  });
  server.Get(R"(/audio/([^/]+)/([^/]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
    const auto path = audio_path(req.matches[1], req.matches[2], req.get_param_value("session"));
    if (!path) return send(res, error(404, "unknown pair or role"));
    std::ifstream in(*path, std::ios::binary);
    if (!in) return send(res, error(404, "audio file unavailable"));
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    res.set_header("Accept-Ranges", "bytes");
    res.set_content(std::move(bytes), "audio/wav");
  });
}

json session_from_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw FormatError(manifest_path + ": cannot open manifest");
  const auto base = fs::path(manifest_path).parent_path();
  json pairs = json::array();
  std::string line, text;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream s(line);
    std::string ref, gen, label;
    if (!(s >> ref)) continue;
    if (!(s >> gen >> label)) {
      throw FormatError(manifest_path + ": line " + std::to_string(lineno) + ": expected 'ref gen system_label'");
    }
    auto resolve = [&](const std::string& p) {
      return fs::absolute(fs::path(p).is_relative() ? base / p : fs::path(p)).lexically_normal().string();
    };
    char id[32];
    std::snprintf(id, sizeof id, "pair-%04zu", pairs.size() + 1);
    pairs.push_back({{"pair_id", id}, {"ref_path", resolve(ref)}, {"gen_path", resolve(gen)}, {"system_label", label}});
    text += ref + "\t" + gen + "\t" + label + "\n";
  }
  if (pairs.empty()) throw FormatError(manifest_path + ": no pairs");
  return {{"pairs", pairs}, {"seed", fnv1a64(text)}, {"required_ratings", 1}};
}

}  // namespace eva::smos
