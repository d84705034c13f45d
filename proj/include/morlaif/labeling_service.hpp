#ifndef MORLAIF_LABELING_SERVICE_HPP_
#define MORLAIF_LABELING_SERVICE_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "morlaif/preference_data.hpp"
#include "morlaif/random.hpp"
#include "morlaif/synthetic_env.hpp"

namespace httplib {
class Server;
}

namespace morlaif {

// Carries the HTTP status the route layer should answer with.
class ServiceError : public std::runtime_error {
 public:
  ServiceError(int status, const std::string& what) : std::runtime_error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct Candidate {
  std::string text;
  std::string source;
};

class ResponseGenerator {
 public:
  virtual ~ResponseGenerator() = default;
  virtual std::string name() const = 0;
  virtual std::string generate(std::string_view transcript, std::string_view message, Rng& rng) = 0;
};

// Samples a template from a policy; the prompt is a hash of the message.
class PolicyGenerator : public ResponseGenerator {
 public:
  PolicyGenerator(std::string name, Policy policy);
  std::string name() const override { return name_; }
  std::string generate(std::string_view transcript, std::string_view message, Rng& rng) override;

 private:
  std::string name_;
  Policy policy_;
};

// Replays queued texts in order, wrapping around.
class QueueGenerator : public ResponseGenerator {
 public:
  QueueGenerator(std::string name, std::vector<std::string> texts);
  std::string name() const override { return name_; }
  std::string generate(std::string_view transcript, std::string_view message, Rng& rng) override;

 private:
  std::string name_;
  std::vector<std::string> texts_;
  size_t next_ = 0;
  std::mutex mu_;
};

struct LabelingConfig {
  std::filesystem::path data_dir = "labeling_data";
  std::uint64_t seed = 0;
  int max_turns = 10;
  int max_conversations = 10;  // per worker, across sessions
  std::string gate_question;   // empty: the shipped riddle
  // Gate passes iff some accept pattern and no deny pattern matches
  // (ECMAScript, case-insensitive).
  std::vector<std::string> accept_patterns = default_accept_patterns();
  std::vector<std::string> deny_patterns = default_deny_patterns();
  std::function<std::string()> clock;  // ISO-8601 UTC; empty: system clock

  static std::vector<std::string> default_accept_patterns();
  static std::vector<std::string> default_deny_patterns();
};

struct Turn {
  std::string role;  // "human" or "assistant"
  std::string text;
};

struct PendingOptions {
  Candidate a;  // as displayed
  Candidate b;
  bool position_swapped = false;
};

struct Conversation {
  std::vector<Turn> transcript;
  int turn_count = 0;  // accepted choices
  bool open = true;
  std::optional<PendingOptions> pending;
};

struct Session {
  std::string session_id;
  std::uint64_t number = 0;
  std::string worker_id;
  bool gate_passed = false;
  int gate_attempts = 0;
  std::set<std::string> quality_flags;
  std::vector<Conversation> conversations;
  std::string created_at;
};

class LabelingService {
 public:
  // Generators fill canonical slots x (index 0) and y (index 1).
  LabelingService(LabelingConfig config, std::shared_ptr<ResponseGenerator> x,
                  std::shared_ptr<ResponseGenerator> y);

  // All operations return JSON bodies and throw ServiceError.
  nlohmann::ordered_json create_session(const std::string& worker_id);
  nlohmann::ordered_json submit_gate(const std::string& session_id, const std::string& answer);
  nlohmann::ordered_json next_turn(const std::string& session_id, const std::string& message);
  nlohmann::ordered_json submit_choice(const std::string& session_id, const std::string& choice);
  // Closes the open conversation and, when asked, opens a new one.
  nlohmann::ordered_json close_conversation(const std::string& session_id, bool open_new);
  nlohmann::ordered_json session_state(const std::string& session_id) const;

  // Persisted records, in log order; flagged ones only on request.
  std::vector<ComparisonRecord> export_records(bool include_flagged) const;
  bool gate_accepts(std::string_view answer) const;
  const std::string& gate_question() const { return gate_question_; }
  std::filesystem::path record_log(const std::string& session_id) const;

 private:
  Session& find(const std::string& session_id);
  const Session& find(const std::string& session_id) const;
  void open_conversation(Session& s);
  std::string now() const;
  int worker_conversations(const std::string& worker) const;

  LabelingConfig config_;
  std::string gate_question_;
  std::shared_ptr<ResponseGenerator> generators_[2];
  std::string tags_[2];
  mutable std::mutex mu_;
  std::map<std::string, Session> sessions_;
  std::map<std::string, int> worker_conversations_;
  std::uint64_t next_session_ = 1;
};

// POST /sessions, /sessions/{id}/gate|turns|choice|close; GET /sessions/{id},
// /export?include_flagged=bool, /healthz. JSON bodies. Session routes drop
// source tags and swap flags so the annotator stays blind; /export keeps them.
void register_routes(httplib::Server& server, LabelingService& service);

}  // namespace morlaif

#endif  // MORLAIF_LABELING_SERVICE_HPP_
