#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

namespace httplib {
class Server;
}

namespace eva::smos {

struct Pair {
  std::string pair_id;
  std::string ref_path;
  std::string gen_path;
  std::string system_label;
};

struct Session {
  std::string id;
  std::string created_at;
  std::vector<Pair> pairs;
  std::uint64_t seed = 0;
  int required_ratings = 1;

  nlohmann::json to_json() const;
  static Session from_json(const nlohmann::json& j);
};

struct RatingRecord {
  std::string session_id;
  std::string pair_id;
  std::string rater_id;
  int score = 0;
  std::string timestamp;
  bool listen_complete = false;

  nlohmann::json to_json() const;
  static RatingRecord from_json(const nlohmann::json& j);
};

/// Presentation order for one rater: Fisher-Yates over pair indices driven
/// by mt19937_64(seed ^ fnv1a64(rater)).
std::vector<std::size_t> rater_order(std::uint64_t seed, const std::string& rater, std::size_t n);

struct Reply {
  int status = 200;
  nlohmann::json body;
};

struct Options {
  std::string data_dir;
  bool allow_partial = false;
};

/// Sessions live in <data_dir>/<id>/session.json with an append-only
/// ratings.jsonl beside it; both are replayed on construction.
class Service {
 public:
  explicit Service(Options options);

  Reply create_session(const nlohmann::json& body);
  Reply next_pair(const std::string& session_id, const std::string& rater) const;
  Reply submit_rating(const nlohmann::json& body);
  Reply report(const std::string& session_id) const;

  /// Path of the audio file for role "ref" or "gen". When session_id is
  /// empty every session is searched.
  std::optional<std::string> audio_path(const std::string& pair_id, const std::string& role,
                                        const std::string& session_id = {}) const;

  std::size_t rating_count(const std::string& session_id) const;

  /// Registers all routes on the server.
  void mount(httplib::Server& server);

 private:
  struct State {
    Session session;
    std::map<std::string, std::size_t> pair_index;
    std::vector<RatingRecord> ratings;
    std::set<std::pair<std::string, std::string>> rated;  // (pair_id, rater_id)
    std::vector<int> coverage;
  };

  void replay();
  void append_line(const std::string& path, const std::string& line);
  std::string session_dir(const std::string& id) const;

  Options options_;
  mutable std::shared_mutex mutex_;
  std::mutex append_mutex_;
  std::map<std::string, std::unique_ptr<State>> sessions_;
  std::uint64_t counter_ = 0;
};

/// Builds a session document from a text manifest with one
/// "ref_path gen_path system_label" triple per line. Relative paths resolve
/// against the manifest folder and are written absolute.
nlohmann::json session_from_manifest(const std::string& manifest_path);

}  // namespace eva::smos
