#include "morlaif/preference_data.hpp"

#include <httplib.h>

#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <thread>
#include <utility>

#include "morlaif/errors.hpp"
#include "morlaif/prompt_assets.hpp"
#include "morlaif/scalarization.hpp"

namespace morlaif {
namespace {

struct Displayed {
  int a;
  int b;
  bool swapped;
};

Displayed display_order(const ResponsePair& pair, Rng& rng) {
  const bool swapped = uniform01(rng) < 0.5;
  return swapped ? Displayed{pair.b, pair.a, true} : Displayed{pair.a, pair.b, false};
}

ComparisonRecord base_record(const ResponsePair& pair, const Displayed& shown, Target target) {
  ComparisonRecord r;
  r.pair_id = make_pair_id(pair.index);
  r.prompt_ref = pair.prompt;
  r.response_a = shown.a;
  r.response_b = shown.b;
  r.position_swapped = shown.swapped;
  r.target = target;
  r.source = Source::kSimulated;
  return r;
}

// P(A) = sigmoid(gap / temperature), handling the temperature -> 0 limit.
Label bradley_terry_draw(double gap, double temperature, Rng& rng) {
  const double u = uniform01(rng);
  const double p = gap == 0.0 ? 0.5 : logistic(gap / temperature);
  return u < p ? Label::kA : Label::kB;
}

nlohmann::json ref_to_json(const Ref& r) {
  return std::visit([](const auto& v) { return nlohmann::json(v); }, r);
}

Ref ref_from_json(const nlohmann::json& j) {
  if (j.is_number_integer()) return j.get<int>();
  if (j.is_string()) return j.get<std::string>();
  throw ValidationError("preference_data: reference must be an integer or a string");
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

struct ParsedUrl {
  std::string base;  // scheme://host[:port]
  std::string path;
};

ParsedUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("feedback client: endpoint needs a scheme");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

}  // namespace

std::string_view to_string(Label l) {
  switch (l) {
    case Label::kA:
      return "A";
    case Label::kB:
      return "B";
    case Label::kTie:
      return "TIE";
  }
  return "?";
}

std::optional<Label> parse_label(std::string_view s) {
  if (s == "A") return Label::kA;
  if (s == "B") return Label::kB;
  if (s == "TIE") return Label::kTie;
  return std::nullopt;
}

std::string_view to_string(Source s) {
  switch (s) {
    case Source::kSimulated:
      return "simulated";
    case Source::kHuman:
      return "human";
    case Source::kExternal:
      return "external";
  }
  return "?";
}

std::optional<Source> parse_source(std::string_view s) {
  for (auto v : {Source::kSimulated, Source::kHuman, Source::kExternal})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

ComparisonRecord canonical(const ComparisonRecord& r) {
  if (!r.position_swapped) return r;
  ComparisonRecord out = r;
  std::swap(out.response_a, out.response_b);
  if (out.label) out.label = flip(*out.label);
  out.position_swapped = false;
  return out;
}

std::string make_pair_id(std::uint64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pair-%06llu", static_cast<unsigned long long>(index));
  return buf;
}

std::vector<ResponsePair> generate_pairs(const ResponseSpace& space, const Policy& policy,
                                         int n_pairs, Rng& rng) {
  if (n_pairs < 1) throw ValidationError("preference_data: n_pairs must be at least 1");
  if (space.n_templates < 2) throw ValidationError("preference_data: need K >= 2 to form pairs");
  if (policy.n_prompts() != space.n_prompts || policy.n_templates() != space.n_templates)
    throw ValidationError("preference_data: policy shape does not match the response space");
  std::vector<ResponsePair> pairs;
  pairs.reserve(static_cast<size_t>(n_pairs));
  for (int i = 0; i < n_pairs; ++i) {
    ResponsePair p;
    p.index = static_cast<std::uint64_t>(i);
    p.prompt = uniform_index(rng, space.n_prompts);
    p.a = sample_response(policy, p.prompt, rng).response;
    for (int attempt = 0;; ++attempt) {
      p.b = sample_response(policy, p.prompt, rng).response;
      if (p.b != p.a) break;
      if (attempt > 100000)
        throw RuntimeFailure("preference_data: policy is too concentrated to draw two distinct responses");
    }
    pairs.push_back(p);
  }
  return pairs;
}

ComparisonRecord simulate_principle_label(const World& world, const ResponseSpace& space,
                                          const ResponsePair& pair, int principle, Rng& rng) {
  if (principle < 0 || principle >= world.n_principles)
    throw ValidationError("preference_data: principle index out of range");
  const Displayed shown = display_order(pair, rng);
  const double gap = principle_score(world, space, pair.prompt, shown.a, principle) -
                     principle_score(world, space, pair.prompt, shown.b, principle);
  ComparisonRecord r = base_record(pair, shown, Target::of(principle));
  r.label = bradley_terry_draw(gap, world.annotator_temps(principle), rng);
  return r;
}

ComparisonRecord simulate_constitution_label(const World& world, const ResponseSpace& space,
                                             const ResponsePair& pair,
                                             std::span<const int> principle_set, Rng& rng,
                                             int* sampled_principle) {
  if (principle_set.empty()) throw ValidationError("preference_data: empty principle set");
  const int principle = principle_set[static_cast<size_t>(
      uniform_index(rng, static_cast<int>(principle_set.size())))];
  if (sampled_principle) *sampled_principle = principle;
  ComparisonRecord r = simulate_principle_label(world, space, pair, principle, rng);
  r.target = Target::overall();
  return r;
}

ComparisonRecord simulate_judge_label(const World& world, const ResponseSpace& space,
                                      const ResponsePair& pair, const JudgeProtocol& protocol,
                                      Rng& rng) {
  if (protocol.tie_band < 0.0) throw ValidationError("preference_data: tie_band must be >= 0");
  const Displayed shown = display_order(pair, rng);
  const double gap = true_utility(world, space, pair.prompt, shown.a) -
                     true_utility(world, space, pair.prompt, shown.b);
  ComparisonRecord r = base_record(pair, shown, Target::overall());
  const Label drawn = bradley_terry_draw(gap, world.judge_temp, rng);
  r.label = protocol.allow_tie && std::abs(gap) < protocol.tie_band ? Label::kTie : drawn;
  return r;
}

// ---- serialization ----------------------------------------------------------

nlohmann::ordered_json to_json(const ComparisonRecord& r) {
  nlohmann::ordered_json j;
  j["pair_id"] = r.pair_id;
  j["prompt_ref"] = ref_to_json(r.prompt_ref);
  j["response_a"] = ref_to_json(r.response_a);
  j["response_b"] = ref_to_json(r.response_b);
  if (r.target.is_overall())
    j["target"] = "OVERALL";
  else
    j["target"] = *r.target.principle;
  j["label"] = r.label ? nlohmann::json(std::string(to_string(*r.label))) : nlohmann::json(nullptr);
  j["source"] = std::string(to_string(r.source));
  j["position_swapped"] = r.position_swapped;
  j["quality_flags"] = r.quality_flags;
  j["created_at"] = r.created_at;
  return j;
}

ComparisonRecord record_from_json(const nlohmann::json& j) {
  try {
    ComparisonRecord r;
    r.pair_id = j.at("pair_id").get<std::string>();
    r.prompt_ref = ref_from_json(j.at("prompt_ref"));
    r.response_a = ref_from_json(j.at("response_a"));
    r.response_b = ref_from_json(j.at("response_b"));
    const auto& t = j.at("target");
    if (t.is_string()) {
      if (t.get<std::string>() != "OVERALL") throw ValidationError("preference_data: bad target");
      r.target = Target::overall();
    } else {
      r.target = Target::of(t.get<int>());
    }
    const auto& l = j.at("label");
    if (!l.is_null()) {
      r.label = parse_label(l.get<std::string>());
      if (!r.label) throw ValidationError("preference_data: bad label");
    }
    const auto src = parse_source(j.at("source").get<std::string>());
    if (!src) throw ValidationError("preference_data: bad source");
    r.source = *src;
    r.position_swapped = j.at("position_swapped").get<bool>();
    r.quality_flags = j.at("quality_flags").get<std::set<std::string>>();
    r.created_at = j.at("created_at").get<std::string>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("preference_data: malformed record: ") + e.what());
  }
}

void write_records(const std::filesystem::path& path, const std::vector<ComparisonRecord>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw RuntimeFailure("write failed for " + path.string());
}

void append_record(const std::filesystem::path& path, const ComparisonRecord& record) {
  const std::string line = to_json(record).dump() + "\n";
  std::FILE* f = std::fopen(path.string().c_str(), "ab");
  if (!f) throw RuntimeFailure("cannot append to " + path.string());
  const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0;
  std::fclose(f);
  if (!ok) throw RuntimeFailure("append failed for " + path.string());
}

std::vector<ComparisonRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::vector<ComparisonRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("preference_data: bad line in " + path.string() + ": " + e.what());
    }
    out.push_back(record_from_json(j));
  }
  return out;
}

// ---- templates ----------------------------------------------------------------

std::string_view to_string(TemplateId id) {
  switch (id) {
    case TemplateId::kFeedbackNoCot:
      return "feedback-no-cot";
    case TemplateId::kFeedbackCot:
      return "feedback-cot";
    case TemplateId::kWinRate:
      return "win-rate";
  }
  return "?";
}

std::optional<TemplateId> parse_template_id(std::string_view s) {
  for (auto id : kAllTemplates)
    if (to_string(id) == s) return id;
  return std::nullopt;
}

std::string template_file_name(TemplateId id) {
  switch (id) {
    case TemplateId::kFeedbackNoCot:
      return "feedback_no_cot.txt";
    case TemplateId::kFeedbackCot:
      return "feedback_cot.txt";
    case TemplateId::kWinRate:
      return "win_rate.txt";
  }
  return "";
}

std::string_view template_text(TemplateId id) {
  switch (id) {
    case TemplateId::kFeedbackNoCot:
      return assets::kFeedbackNoCot;
    case TemplateId::kFeedbackCot:
      return assets::kFeedbackCot;
    case TemplateId::kWinRate:
      return assets::kWinRate;
  }
  return {};
}

std::string_view gate_riddle_text() { return assets::kGateRiddle; }

std::string render_template(TemplateId id, std::string_view principle, std::string_view conversation,
                            std::string_view response_a, std::string_view response_b) {
  const std::array<std::pair<std::string_view, std::string_view>, 4> slots{{
      {"{principle}", principle},
      {"{conversation}", conversation},
      {"{responseA}", response_a},
      {"{responseB}", response_b},
  }};
  const std::string_view t = template_text(id);
  std::string out;
  out.reserve(t.size() + conversation.size() + response_a.size() + response_b.size());
  size_t i = 0;
  while (i < t.size()) {
    bool replaced = false;
    if (t[i] == '{') {
      for (const auto& [key, value] : slots) {
        if (t.substr(i, key.size()) == key) {
          out.append(value);
          i += key.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out.push_back(t[i++]);
  }
  return out;
}

std::optional<Label> parse_choice(std::string_view reply, TemplateId id) {
  if (id == TemplateId::kFeedbackCot) {
    constexpr std::string_view kMarker = "Chosen option: ";
    const auto pos = reply.rfind(kMarker);
    if (pos == std::string_view::npos) return std::nullopt;
    reply = reply.substr(pos + kMarker.size());
  }
  reply = trim(reply);
  if (reply.empty()) return std::nullopt;
  const char c = reply.front();
  if (c != 'A' && c != 'B') return std::nullopt;
  if (reply.size() > 1 && std::isalnum(static_cast<unsigned char>(reply[1]))) return std::nullopt;
  return c == 'A' ? Label::kA : Label::kB;
}

// ---- external client ------------------------------------------------------------

CompletionReply HttpCompletionTransport::complete(const CompletionRequest& request) {
  CompletionReply reply;
  ParsedUrl url;
  try {
    url = split_url(request.endpoint);
  } catch (const ValidationError& e) {
    reply.error = e.what();
    return reply;
  }
  httplib::Client client(url.base);
  const auto secs = static_cast<time_t>(request.timeout_s);
  const auto usecs = static_cast<time_t>((request.timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  httplib::Headers headers{{"Authorization", "Bearer " + request.api_key},
                           {"Idempotency-Key", request.idempotency_key}};
  const nlohmann::json body{{"model", request.model},
                            {"prompt", request.prompt},
                            {"max_tokens", 256},
                            {"temperature", 0}};
  auto res = client.Post(url.path, headers, body.dump(), "application/json");
  if (!res) {
    reply.transient = true;
    reply.error = "transport error: " + httplib::to_string(res.error());
    return reply;
  }
  if (res->status == 429 || res->status >= 500) {
    reply.transient = true;
    reply.error = "HTTP " + std::to_string(res->status);
    return reply;
  }
  if (res->status != 200) {
    reply.error = "HTTP " + std::to_string(res->status);
    return reply;
  }
  try {
    const auto j = nlohmann::json::parse(res->body);
    const auto& choice = j.at("choices").at(0);
    if (choice.contains("text"))
      reply.text = choice.at("text").get<std::string>();
    else
      reply.text = choice.at("message").at("content").get<std::string>();
    reply.ok = true;
  } catch (const nlohmann::json::exception& e) {
    reply.error = std::string("malformed completion body: ") + e.what();
  }
  return reply;
}

ExternalFeedbackClient::ExternalFeedbackClient(FeedbackClientConfig config,
                                               std::shared_ptr<CompletionTransport> transport,
                                               Sleeper sleeper)
    : config_(std::move(config)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
  if (!transport_) throw ValidationError("feedback client: no transport");
  if (!sleeper_)
    sleeper_ = [](int ms) { std::this_thread::sleep_for(std::chrono::milliseconds(ms)); };
}

ComparisonRecord ExternalFeedbackClient::label(const TextPair& pair, Target target,
                                               std::string_view principle_text,
                                               TemplateId template_id, Rng& rng) const {
  const char* key = std::getenv(config_.credential_env.c_str());
  if (key == nullptr || *key == '\0')
    throw ValidationError("feedback client: credential variable " + config_.credential_env + " is not set");

  const bool swapped = uniform01(rng) < 0.5;
  const std::string& shown_a = swapped ? pair.response_b : pair.response_a;
  const std::string& shown_b = swapped ? pair.response_a : pair.response_b;

  CompletionRequest request;
  request.endpoint = config_.endpoint;
  request.model = config_.model;
  request.prompt = render_template(template_id, principle_text, pair.conversation, shown_a, shown_b);
  request.api_key = key;
  request.idempotency_key = pair.pair_id + ":" + std::string(to_string(template_id)) + ":" +
                            (target.is_overall() ? std::string("OVERALL") : std::to_string(*target.principle));
  request.timeout_s = config_.timeout_s;

  CompletionReply reply;
  int delay = config_.backoff_initial_ms;
  for (int attempt = 0;; ++attempt) {
    reply = transport_->complete(request);
    if (reply.ok) break;
    if (!reply.transient || attempt >= config_.max_retries)
      throw RuntimeFailure("feedback client: request failed after " + std::to_string(attempt + 1) +
                           " attempt(s): " + reply.error);
    sleeper_(delay);
    delay *= 2;
  }

  ComparisonRecord r;
  r.pair_id = pair.pair_id;
  r.prompt_ref = pair.conversation;
  r.response_a = shown_a;
  r.response_b = shown_b;
  r.target = target;
  r.source = Source::kExternal;
  r.position_swapped = swapped;
  r.label = parse_choice(reply.text, template_id);
  if (!r.label) r.quality_flags.insert("parse_failed");
  return r;
}

}  // namespace morlaif
