#ifndef MORLAIF_PREFERENCE_DATA_HPP_
#define MORLAIF_PREFERENCE_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "morlaif/random.hpp"
#include "morlaif/synthetic_env.hpp"

namespace morlaif {

enum class Label { kA, kB, kTie };
enum class Source { kSimulated, kHuman, kExternal };

std::string_view to_string(Label l);
std::optional<Label> parse_label(std::string_view s);
std::string_view to_string(Source s);
std::optional<Source> parse_source(std::string_view s);
inline Label flip(Label l) { return l == Label::kA ? Label::kB : l == Label::kB ? Label::kA : Label::kTie; }

// A principle index, or OVERALL.
struct Target {
  std::optional<int> principle;

  static Target overall() { return {}; }
  static Target of(int i) { return {i}; }
  bool is_overall() const { return !principle.has_value(); }
  bool operator==(const Target&) const = default;
};

// Template/prompt index in the synthetic space, or raw text.
using Ref = std::variant<int, std::string>;

// Simulated records carry this logical timestamp so datasets are reproducible.
inline constexpr std::string_view kSimulatedTimestamp = "1970-01-01T00:00:00Z";

struct ComparisonRecord {
  std::string pair_id;
  Ref prompt_ref = 0;
  Ref response_a = 0;  // as displayed to the annotator
  Ref response_b = 0;
  Target target;
  std::optional<Label> label;  // absent when the annotator output could not be parsed
  Source source = Source::kSimulated;
  bool position_swapped = false;
  std::set<std::string> quality_flags;
  std::string created_at{kSimulatedTimestamp};

  bool operator==(const ComparisonRecord&) const = default;
};

// Record in canonical orientation: if the display order was swapped, the
// responses are swapped back and A/B labels flipped.
ComparisonRecord canonical(const ComparisonRecord& r);

// Two distinct templates of one prompt, in canonical orientation.
struct ResponsePair {
  std::uint64_t index = 0;
  int prompt = 0;
  int a = 0;
  int b = 0;
};

std::string make_pair_id(std::uint64_t index);

// Uniform prompt, two distinct draws from the policy (rejection on collision).
std::vector<ResponsePair> generate_pairs(const ResponseSpace& space, const Policy& policy,
                                         int n_pairs, Rng& rng);

// Bradley-Terry annotator for one principle; never returns TIE.
ComparisonRecord simulate_principle_label(const World& world, const ResponseSpace& space,
                                          const ResponsePair& pair, int principle, Rng& rng);

// Samples one principle uniformly from the set and labels with it; the record
// target is OVERALL. The sampled principle is reported through the optional
// out-parameter only.
ComparisonRecord simulate_constitution_label(const World& world, const ResponseSpace& space,
                                             const ResponsePair& pair,
                                             std::span<const int> principle_set, Rng& rng,
                                             int* sampled_principle = nullptr);

struct JudgeProtocol {
  bool allow_tie = false;
  double tie_band = 0.0;
};

ComparisonRecord simulate_judge_label(const World& world, const ResponseSpace& space,
                                      const ResponsePair& pair, const JudgeProtocol& protocol,
                                      Rng& rng);

// Line-delimited JSON datasets, one record per line.
nlohmann::ordered_json to_json(const ComparisonRecord& r);
ComparisonRecord record_from_json(const nlohmann::json& j);
void write_records(const std::filesystem::path& path, const std::vector<ComparisonRecord>& records);
void append_record(const std::filesystem::path& path, const ComparisonRecord& record);
std::vector<ComparisonRecord> read_records(const std::filesystem::path& path);

// ---- Prompt templates ------------------------------------------------------

enum class TemplateId { kFeedbackNoCot, kFeedbackCot, kWinRate };

inline constexpr TemplateId kAllTemplates[] = {TemplateId::kFeedbackNoCot, TemplateId::kFeedbackCot,
                                               TemplateId::kWinRate};

std::string_view to_string(TemplateId id);
std::optional<TemplateId> parse_template_id(std::string_view s);
// Asset file name, e.g. "feedback_no_cot.txt".
std::string template_file_name(TemplateId id);
std::string_view template_text(TemplateId id);
std::string_view gate_riddle_text();

// Single pass substitution of {principle}, {conversation}, {responseA} and
// {responseB}; substituted text is never rescanned.
std::string render_template(TemplateId id, std::string_view principle, std::string_view conversation,
                            std::string_view response_a, std::string_view response_b);

// "A"/"B" decision from a feedback model reply. For the CoT template only the
// text after the last "Chosen option: " is considered.
std::optional<Label> parse_choice(std::string_view reply, TemplateId id);

// ---- External feedback client ----------------------------------------------

struct FeedbackClientConfig {
  std::string endpoint;  // http(s)://host[:port]/path of a text-completion API
  std::string model;
  std::string credential_env = "MORLAIF_FEEDBACK_API_KEY";
  int max_retries = 3;
  double timeout_s = 30.0;
  int backoff_initial_ms = 500;
  bool enabled = false;
};

struct CompletionRequest {
  std::string endpoint;
  std::string model;
  std::string prompt;
  std::string api_key;
  std::string idempotency_key;
  double timeout_s = 30.0;
};

struct CompletionReply {
  bool ok = false;
  bool transient = false;  // worth retrying
  std::string text;
  std::string error;
};

class CompletionTransport {
 public:
  virtual ~CompletionTransport() = default;
  virtual CompletionReply complete(const CompletionRequest& request) = 0;
};

// POSTs {"model", "prompt", "max_tokens", "temperature"} and reads
// choices[0].text (or choices[0].message.content).
class HttpCompletionTransport : public CompletionTransport {
 public:
  CompletionReply complete(const CompletionRequest& request) override;
};

struct TextPair {
  std::string pair_id;
  std::string conversation;
  std::string response_a;  // canonical orientation
  std::string response_b;
};

class ExternalFeedbackClient {
 public:
  using Sleeper = std::function<void(int milliseconds)>;

  ExternalFeedbackClient(FeedbackClientConfig config, std::shared_ptr<CompletionTransport> transport,
                         Sleeper sleeper = {});

  // Renders the template (A/B order randomized and recorded), issues one
  // request with retries on transient failures, and parses the decision.
  // An unparseable reply yields a record with no label and the parse_failed
  // flag. Throws RuntimeFailure when retries are exhausted and
  // ValidationError when the credential variable is unset.
  ComparisonRecord label(const TextPair& pair, Target target, std::string_view principle_text,
                         TemplateId template_id, Rng& rng) const;

 private:
  FeedbackClientConfig config_;
  std::shared_ptr<CompletionTransport> transport_;
  Sleeper sleeper_;
};

}  // namespace morlaif

#endif  // MORLAIF_PREFERENCE_DATA_HPP_
