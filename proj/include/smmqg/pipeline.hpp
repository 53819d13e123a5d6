#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "smmqg/corpus.hpp"
#include "smmqg/index.hpp"
#include "smmqg/provider.hpp"

namespace smmqg {

/// Number of sources of each modality a question must be built from.
struct ModalityRequirement {
    int text = 0;
    int table = 0;
    int image = 0;

    int count(Modality m) const;
    int& count(Modality m);
    int total() const { return text + table + image; }
    /// Throws unless every count is nonnegative and the sum is at least 1.
    void validate() const;

    /// Prompt form, e.g. "1 text, 2 table".
    std::string describe() const;
    /// Report label, e.g. "Text-Table" or "Image".
    std::string label() const;
    std::array<int, 3> as_array() const { return {text, table, image}; }
    static ModalityRequirement from_array(const std::array<int, 3>& a) { return {a[0], a[1], a[2]}; }

    bool operator==(const ModalityRequirement&) const = default;
};

ModalityRequirement tally(const std::vector<std::string>& ids, const Corpus& corpus);

/// A named question style: description, worked examples and the modality
/// combinations it may be generated for.
struct QuestionStyle {
    std::string name;
    std::string description;
    std::vector<FewShot> few_shots;
    std::vector<ModalityRequirement> allowed_modalities;
    /// Multi-hop styles run the two-intermediate path; their few_shots are
    /// combination examples and intermediate_few_shots feed the intermediate steps.
    bool multihop = false;
    std::vector<FewShot> intermediate_few_shots;

    bool allows(const ModalityRequirement& m) const;
};

QuestionStyle parse_style(std::string_view json_text);
QuestionStyle load_style(const std::filesystem::path& path);

/// Prompt templates, entity-extraction examples and the few-shot layout.
struct PromptAssets {
    PromptCatalog catalog;
    std::vector<FewShot> entity_few_shots;
    FewShotMode mode = FewShotMode::Turns;

    /// Loads <dir>/*.txt templates and <dir>/entity_few_shots.json.
    static PromptAssets load(const std::filesystem::path& dir, FewShotMode mode = FewShotMode::Turns);
};

inline constexpr double kEntityTemperature = 1.0;
inline constexpr double kGreedyTemperature = 0.0;

struct Candidate {
    Source source;
    std::size_t rank = 0;  // 1-based rank within its modality
};

struct CandidateSet {
    std::vector<Candidate> candidates;
    std::string entity;
    std::string seed_id;
    ModalityRequirement requirement;

    std::vector<std::string> ids() const;
    std::vector<Source> sources() const;
};

struct MultihopTrace {
    std::array<std::string, 2> questions;
    std::array<std::string, 2> answers;
    std::array<std::vector<std::string>, 2> source_ids;
};

struct QaSample {
    std::string id;
    std::string question;
    std::string answer;
    std::vector<std::string> source_ids;
    std::vector<std::string> distractor_ids;
    std::string style;
    ModalityRequirement requirement;
    std::string entity;
    std::string seed_id;
    std::vector<std::string> transcript_refs;
    std::optional<MultihopTrace> multihop;
};

enum class RejectionStage { Refusal, ModalityMismatch, StyleCheckFail, CorrectnessFail, ParseFail };
std::string_view to_string(RejectionStage s);

struct Rejection {
    RejectionStage stage = RejectionStage::ParseFail;
    std::string detail;
    std::string seed_id;
    std::string entity;
    std::string style;
    ModalityRequirement requirement;
    std::size_t attempt = 0;
};

template <typename T>
using Outcome = std::variant<T, Rejection>;

template <typename T>
bool is_rejection(const Outcome<T>& o) {
    return std::holds_alternative<Rejection>(o);
}

/// Request hashes of every completion made during one attempt.
struct Trace {
    std::vector<std::string> refs;
};

/// Parsed "<question> | <answer> | <citation>" with 1-based citation numbers.
struct ParsedQa {
    std::string question;
    std::string answer;
    std::vector<std::size_t> citations;
};

/// Accepts "Passage 2", "Image 3", bare integers and lists joined by
/// commas, semicolons or "and". Throws ParseError on anything else or on
/// numbers outside [1, n].
std::vector<std::size_t> parse_citations(std::string_view citation, std::size_t n);

/// Refusal -> Rejection(Refusal); malformed -> Rejection(ParseFail).
Outcome<ParsedQa> parse_generation(std::string_view response, std::size_t n_candidates);

/// Passages block for non-image sources plus one captioned media turn per
/// image. labels[i] is the number shown for sources[i].
struct SourceBlock {
    std::string passages;
    std::vector<ChatTurn> media;
    bool has_images = false;
};
SourceBlock enumerate_sources(const std::vector<Source>& sources, const std::vector<std::string>& labels);

/// Generation shared by standard and intermediate questions.
Outcome<ParsedQa> generate_over(Provider& provider, const PromptAssets& assets, const std::vector<Source>& sources,
                                const std::string& style_prompt, const std::vector<FewShot>& shots,
                                const ModalityRequirement& requirement, const std::string& tag, Trace& trace);

Outcome<std::string> extract_entity(Provider& provider, const PromptAssets& assets, const Source& seed,
                                    Trace& trace);

CandidateSet retrieve_candidates(const DenseIndex& index, Provider& provider, const Corpus& corpus,
                                 const std::string& entity, const ModalityRequirement& requirement,
                                 std::size_t k_modality, const std::string& seed_id);

/// Builds a draft (no id, no verification) from a candidate set.
Outcome<QaSample> generate_qa(Provider& provider, const PromptAssets& assets, const CandidateSet& cand,
                              const QuestionStyle& style, Trace& trace);

/// nullopt means the check passed.
std::optional<Rejection> verify_modalities(const QaSample& draft, const Corpus& corpus,
                                           const ModalityRequirement& requirement);

/// Maps a verification response onto pass / rejection.
std::optional<Rejection> interpret_verification(std::string_view response);

std::optional<Rejection> verify_qa(Provider& provider, const PromptAssets& assets, const QaSample& draft,
                                   const QuestionStyle& style, const std::vector<Source>& sources, Trace& trace);

struct PlanItem {
    std::string style;
    ModalityRequirement requirement;
    std::size_t count = 0;
};

struct PipelineConfig {
    std::vector<PlanItem> plan;
    std::size_t k_modality = 2;
    std::size_t max_attempts_factor = 5;
    std::uint64_t rng_seed = 0;
    unsigned jobs = 1;
};

struct PipelineResult {
    std::vector<QaSample> samples;
    std::vector<Rejection> rejections;
    std::size_t attempts = 0;
    std::size_t target = 0;
    bool complete() const { return samples.size() >= target; }
};

/// Child generator for one attempt, derived only from the run seed and the
/// attempt index.
Rng attempt_rng(std::uint64_t run_seed, std::size_t attempt);

/// Throws if the plan cannot run on this corpus with these styles.
void validate_plan(const PipelineConfig& config, const Corpus& corpus, const std::vector<QuestionStyle>& styles);

/// Seed -> entity -> candidates -> generation -> verification, repeated until
/// every plan item has its count or the attempt budget runs out. Attempts
/// run in deterministic waves; output order does not depend on `jobs`.
PipelineResult run_pipeline(const PipelineConfig& config, const Corpus& corpus, const DenseIndex& index,
                            const SeedWeights& weights, Provider& provider, const PromptAssets& assets,
                            const std::vector<QuestionStyle>& styles);

/// One dataset JSONL line.
std::string sample_to_json_line(const QaSample& s);
std::string rejection_to_json_line(const Rejection& r);
QaSample sample_from_json_line(std::string_view line);
std::vector<QaSample> load_dataset(const std::filesystem::path& path);

}  // namespace smmqg
