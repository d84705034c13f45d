#include "morlaif/labeling_service.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <random>
#include <regex>

#include <httplib.h>

#include "morlaif/errors.hpp"
#include "morlaif/json_util.hpp"

namespace morlaif {
namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string render_transcript(const std::vector<Turn>& turns) {
  std::string out;
  for (const auto& t : turns) {
    if (!out.empty()) out += "\n\n";
    out += (t.role == "human" ? "Human: " : "Assistant: ") + t.text;
  }
  return out;
}

bool any_match(const std::vector<std::string>& patterns, std::string_view text) {
  const std::string s(text);
  for (const auto& p : patterns)
    if (std::regex_search(s, std::regex(p, std::regex::ECMAScript | std::regex::icase))) return true;
  return false;
}

// Slots of the per-turn random streams.
enum : std::uint64_t { kSwapSlot = 0, kTieSlot = 1, kXSlot = 2, kYSlot = 3 };

}  // namespace

PolicyGenerator::PolicyGenerator(std::string name, Policy policy) : name_(std::move(name)), policy_(std::move(policy)) {
  if (policy_.n_prompts() < 1 || policy_.n_templates() < 1) throw ValidationError("generator policy is empty");
}

std::string PolicyGenerator::generate(std::string_view, std::string_view message, Rng& rng) {
  const int prompt = static_cast<int>(fnv1a(message) % static_cast<std::uint64_t>(policy_.n_prompts()));
  const int response = sample_response(policy_, prompt, rng).response;
  return "[prompt " + std::to_string(prompt) + ", response template " + std::to_string(response) + "]";
}

QueueGenerator::QueueGenerator(std::string name, std::vector<std::string> texts)
    : name_(std::move(name)), texts_(std::move(texts)) {
  if (texts_.empty()) throw ValidationError("queue generator needs at least one text");
}

std::string QueueGenerator::generate(std::string_view, std::string_view, Rng&) {
  std::lock_guard<std::mutex> lock(mu_);
  return texts_[next_++ % texts_.size()];
}

std::vector<std::string> LabelingConfig::default_accept_patterns() {
  return {R"(\b(cross(es|ed|ing)?|across|rows?|rowing|rowed|over)\b)"};
}

std::vector<std::string> LabelingConfig::default_deny_patterns() {
  // Artifacts of the classic puzzle that the modified riddle does not need.
  return {R"(\b(wolf|cabbage|fox|grain|chicken)\b)", R"(\b(returns?|returning|back)\b)",
          R"(\b(trips|first trip|second trip|twice|again)\b)", R"(\bleaves? the goat\b)"};
}

LabelingService::LabelingService(LabelingConfig config, std::shared_ptr<ResponseGenerator> x,
                                 std::shared_ptr<ResponseGenerator> y)
    : config_(std::move(config)) {
  if (!x || !y) throw ValidationError("labeling service needs two generators");
  if (config_.max_turns < 1 || config_.max_conversations < 1) throw ValidationError("caps must be positive");
  for (const auto& p : config_.accept_patterns) std::regex(p, std::regex::ECMAScript);  // throws on bad input
  for (const auto& p : config_.deny_patterns) std::regex(p, std::regex::ECMAScript);
  gate_question_ = config_.gate_question.empty() ? std::string(gate_riddle_text()) : config_.gate_question;
  generators_[0] = std::move(x);
  generators_[1] = std::move(y);
  tags_[0] = generators_[0]->name();
  tags_[1] = generators_[1]->name();
  if (tags_[0] == tags_[1]) {
    tags_[0] += "#x";
    tags_[1] += "#y";
  }
  fs::create_directories(config_.data_dir / "records");
  // Replay the worker log so caps and session numbering survive restarts.
  const fs::path log = config_.data_dir / "workers.jsonl";
  if (fs::exists(log)) {
    std::ifstream in(log);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json e = json::parse(line, nullptr, false);
      if (e.is_discarded() || !e.is_object()) continue;  // torn last line
      worker_conversations_[e.value("worker_id", "")] += 1;
      next_session_ = std::max<std::uint64_t>(next_session_, e.value("session_number", 0ULL) + 1);
    }
  }
}

std::string LabelingService::now() const {
  if (config_.clock) return config_.clock();
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int LabelingService::worker_conversations(const std::string& worker) const {
  const auto it = worker_conversations_.find(worker);
  return it == worker_conversations_.end() ? 0 : it->second;
}

fs::path LabelingService::record_log(const std::string& session_id) const {
  return config_.data_dir / "records" / (session_id + ".jsonl");
}

Session& LabelingService::find(const std::string& session_id) {
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + session_id + "'");
  return it->second;
}

const Session& LabelingService::find(const std::string& session_id) const {
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + session_id + "'");
  return it->second;
}

void LabelingService::open_conversation(Session& s) {
  if (worker_conversations(s.worker_id) >= config_.max_conversations)
    throw ServiceError(409, "worker '" + s.worker_id + "' has used all " +
                                std::to_string(config_.max_conversations) + " conversations");
  ordered_json e{{"event", "conversation_opened"},
                 {"worker_id", s.worker_id},
                 {"session_id", s.session_id},
                 {"session_number", s.number},
                 {"conversation", s.conversations.size()}};
  const std::string line = e.dump() + "\n";
  std::FILE* f = std::fopen((config_.data_dir / "workers.jsonl").string().c_str(), "ab");
  if (!f || std::fwrite(line.data(), 1, line.size(), f) != line.size() || std::fflush(f) != 0) {
    if (f) std::fclose(f);
    throw RuntimeFailure("cannot append to the worker log");
  }
  std::fclose(f);
  worker_conversations_[s.worker_id] += 1;
  s.conversations.emplace_back();
}

ordered_json LabelingService::create_session(const std::string& worker_id) {
  if (worker_id.empty()) throw ServiceError(400, "worker_id is required");
  std::lock_guard<std::mutex> lock(mu_);
  Session s;
  s.number = next_session_;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "s-%06llu", static_cast<unsigned long long>(s.number));
  s.session_id = buf;
  s.worker_id = worker_id;
  s.created_at = now();
  open_conversation(s);  // throws when the worker is out of conversations
  ++next_session_;
  const std::string id = s.session_id;
  sessions_.emplace(id, std::move(s));
  const Session& stored = sessions_.at(id);
  return {{"session_id", id},
          {"worker_id", worker_id},
          {"gate_question", gate_question_},
          {"gate_passed", false},
          {"conversations_remaining", config_.max_conversations - worker_conversations(worker_id)},
          {"created_at", stored.created_at}};
}

bool LabelingService::gate_accepts(std::string_view answer) const {
  return any_match(config_.accept_patterns, answer) && !any_match(config_.deny_patterns, answer);
}

ordered_json LabelingService::submit_gate(const std::string& session_id, const std::string& answer) {
  std::lock_guard<std::mutex> lock(mu_);
  Session& s = find(session_id);
  if (s.gate_passed) throw ServiceError(409, "gate already passed");
  ++s.gate_attempts;
  const bool pass = gate_accepts(answer);
  if (pass)
    s.gate_passed = true;
  else
    s.quality_flags.insert("gate_failed");
  return {{"session_id", session_id},
          {"passed", pass},
          {"attempts", s.gate_attempts},
          {"quality_flags", s.quality_flags}};
}

ordered_json LabelingService::next_turn(const std::string& session_id, const std::string& message) {
  if (message.empty()) throw ServiceError(400, "message must not be empty");
  std::lock_guard<std::mutex> lock(mu_);
  Session& s = find(session_id);
  if (!s.gate_passed) throw ServiceError(409, "gate not passed");
  Conversation& c = s.conversations.back();
  if (!c.open)
    throw ServiceError(409, c.turn_count >= config_.max_turns ? "turn limit reached; conversation closed"
                                                              : "conversation closed; start a new one");
  if (c.pending) throw ServiceError(409, "options already outstanding for this turn");
  if (c.turn_count >= config_.max_turns) {
    c.open = false;
    throw ServiceError(409, "turn limit reached; conversation closed");
  }

  c.transcript.push_back({"human", message});
  const std::string transcript = render_transcript(c.transcript);
  const auto conv = static_cast<std::uint64_t>(s.conversations.size() - 1);
  const auto turn = static_cast<std::uint64_t>(c.turn_count);
  Candidate cand[2];
  for (int g = 0; g < 2; ++g) {
    Rng rng = make_rng(config_.seed, {kServiceStream, s.number, conv, turn, g == 0 ? kXSlot : kYSlot});
    cand[g] = {generators_[g]->generate(transcript, message, rng), tags_[g]};
  }
  Rng swap_rng = make_rng(config_.seed, {kServiceStream, s.number, conv, turn, kSwapSlot});
  const bool swapped = std::bernoulli_distribution(0.5)(swap_rng);
  PendingOptions p{swapped ? cand[1] : cand[0], swapped ? cand[0] : cand[1], swapped};
  c.pending = p;
  return {{"session_id", session_id},
          {"conversation", conv},
          {"turn", turn},
          {"option_a", p.a.text},
          {"option_b", p.b.text},
          {"display_order", {p.a.source, p.b.source}},
          {"position_swapped", swapped},
          {"turns_remaining", config_.max_turns - c.turn_count}};
}

ordered_json LabelingService::submit_choice(const std::string& session_id, const std::string& choice) {
  const std::optional<Label> label = parse_label(choice);
  if (!label) throw ServiceError(400, "choice must be A, B or TIE");
  std::lock_guard<std::mutex> lock(mu_);
  Session& s = find(session_id);
  if (!s.gate_passed) throw ServiceError(409, "gate not passed");
  Conversation& c = s.conversations.back();
  if (!c.pending) throw ServiceError(409, "no outstanding options");
  const PendingOptions& p = *c.pending;
  const auto conv = static_cast<std::uint64_t>(s.conversations.size() - 1);
  const auto turn = static_cast<std::uint64_t>(c.turn_count);

  ComparisonRecord r;
  char id[64];
  std::snprintf(id, sizeof(id), "%s-c%02llu-t%02llu", s.session_id.c_str(), static_cast<unsigned long long>(conv),
                static_cast<unsigned long long>(turn));
  r.pair_id = id;
  r.prompt_ref = render_transcript(c.transcript);
  r.response_a = p.a.text;
  r.response_b = p.b.text;
  r.target = Target::overall();
  r.label = *label;
  r.source = Source::kHuman;
  r.position_swapped = p.position_swapped;
  r.quality_flags = s.quality_flags;
  r.created_at = now();
  // Write-ahead: the record is on disk before the choice is acknowledged.
  append_record(record_log(s.session_id), r);

  const Candidate* chosen = &p.a;
  if (*label == Label::kB) chosen = &p.b;
  if (*label == Label::kTie) {
    Rng rng = make_rng(config_.seed, {kServiceStream, s.number, conv, turn, kTieSlot});
    chosen = std::bernoulli_distribution(0.5)(rng) ? &p.b : &p.a;
  }
  const Candidate continuation = *chosen;
  c.transcript.push_back({"assistant", continuation.text});
  c.pending.reset();
  ++c.turn_count;
  if (c.turn_count >= config_.max_turns) c.open = false;
  return {{"session_id", session_id},
          {"pair_id", r.pair_id},
          {"label", to_string(*label)},
          {"continuation", continuation.text},
          {"continuation_source", continuation.source},
          {"turn_count", c.turn_count},
          {"turns_remaining", config_.max_turns - c.turn_count},
          {"conversation_closed", !c.open}};
}

ordered_json LabelingService::close_conversation(const std::string& session_id, bool open_new) {
  std::lock_guard<std::mutex> lock(mu_);
  Session& s = find(session_id);
  Conversation& c = s.conversations.back();
  c.open = false;
  c.pending.reset();
  if (open_new) open_conversation(s);
  return {{"session_id", session_id},
          {"conversation", s.conversations.size() - 1},
          {"conversation_open", s.conversations.back().open},
          {"conversations_remaining", config_.max_conversations - worker_conversations(s.worker_id)}};
}

ordered_json LabelingService::session_state(const std::string& session_id) const {
  std::lock_guard<std::mutex> lock(mu_);
  const Session& s = find(session_id);
  const Conversation& c = s.conversations.back();
  ordered_json transcript = ordered_json::array();
  for (const auto& t : c.transcript) transcript.push_back({{"role", t.role}, {"text", t.text}});
  ordered_json j{{"session_id", s.session_id},
                 {"worker_id", s.worker_id},
                 {"gate_passed", s.gate_passed},
                 {"quality_flags", s.quality_flags},
                 {"conversation", s.conversations.size() - 1},
                 {"conversation_open", c.open},
                 {"turn_count", c.turn_count},
                 {"turns_remaining", config_.max_turns - c.turn_count},
                 {"conversations_remaining", config_.max_conversations - worker_conversations(s.worker_id)},
                 {"transcript", transcript},
                 {"created_at", s.created_at}};
  if (c.pending)
    j["pending_options"] = {{"option_a", c.pending->a.text},
                            {"option_b", c.pending->b.text},
                            {"display_order", {c.pending->a.source, c.pending->b.source}}};
  else
    j["pending_options"] = nullptr;
  return j;
}

std::vector<ComparisonRecord> LabelingService::export_records(bool include_flagged) const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<fs::path> logs;
  for (const auto& e : fs::directory_iterator(config_.data_dir / "records"))
    if (e.path().extension() == ".jsonl") logs.push_back(e.path());
  std::sort(logs.begin(), logs.end());
  std::vector<ComparisonRecord> out;
  for (const auto& p : logs)
    for (auto& r : read_records(p))
      if (include_flagged || r.quality_flags.empty()) out.push_back(std::move(r));
  return out;
}

// ---- HTTP routes ------------------------------------------------------------------

namespace {

void reply(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw ServiceError(400, "body must be a JSON object");
  return j;
}

std::string string_field(const json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_string()) throw ServiceError(400, std::string("'") + key + "' must be a string");
  return j[key].get<std::string>();
}

// Annotator-facing bodies never say which generator produced A or B.
ordered_json blind(ordered_json j) {
  j.erase("display_order");
  j.erase("position_swapped");
  j.erase("continuation_source");
  if (j.contains("pending_options") && j["pending_options"].is_object()) j["pending_options"].erase("display_order");
  return j;
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      reply(res, 200, f(req));
    } catch (const ServiceError& e) {
      reply(res, e.status(), {{"error", e.what()}});
    } catch (const ValidationError& e) {
      reply(res, 400, {{"error", e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  };
}

}  // namespace

void register_routes(httplib::Server& server, LabelingService& service) {
  LabelingService* svc = &service;
  server.Get("/healthz", guarded([](const httplib::Request&) { return ordered_json{{"status", "ok"}}; }));
  server.Post("/sessions", guarded([svc](const httplib::Request& req) {
                return svc->create_session(string_field(parse_body(req), "worker_id"));
              }));
  server.Get(R"(/sessions/([^/]+))",
             guarded([svc](const httplib::Request& req) { return blind(svc->session_state(req.matches[1])); }));
  server.Post(R"(/sessions/([^/]+)/gate)", guarded([svc](const httplib::Request& req) {
                const json body = parse_body(req);
                return svc->submit_gate(req.matches[1], string_field(body, "answer"));
              }));
  server.Post(R"(/sessions/([^/]+)/turns)", guarded([svc](const httplib::Request& req) {
                const json body = parse_body(req);
                return blind(svc->next_turn(req.matches[1], string_field(body, "message")));
              }));
  server.Post(R"(/sessions/([^/]+)/choice)", guarded([svc](const httplib::Request& req) {
                const json body = parse_body(req);
                return blind(svc->submit_choice(req.matches[1], string_field(body, "choice")));
              }));
  server.Post(R"(/sessions/([^/]+)/close)", guarded([svc](const httplib::Request& req) {
                const json body = parse_body(req);
                bool open_new = true;
                if (body.contains("new_conversation")) {
                  if (!body["new_conversation"].is_boolean())
                    throw ServiceError(400, "'new_conversation' must be a boolean");
                  open_new = body["new_conversation"].get<bool>();
                }
                return svc->close_conversation(req.matches[1], open_new);
              }));
  server.Get("/export", [svc](const httplib::Request& req, httplib::Response& res) {
    bool include = false;
    if (req.has_param("include_flagged")) {
      const std::string v = req.get_param_value("include_flagged");
      if (v == "true" || v == "1")
        include = true;
      else if (v != "false" && v != "0")
        return reply(res, 400, {{"error", "include_flagged must be true or false"}});
    }
    try {
      std::string body;
      for (const auto& r : svc->export_records(include)) body += to_json(r).dump() + "\n";
      res.status = 200;
      res.set_content(body, "application/x-ndjson");
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  });
}

}  // namespace morlaif
