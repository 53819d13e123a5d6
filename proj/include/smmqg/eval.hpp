#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "smmqg/corpus.hpp"
#include "smmqg/pipeline.hpp"
#include "smmqg/provider.hpp"
#include "smmqg/stats.hpp"

namespace smmqg {

struct RetrievalTrial {
    std::string question_id;
    std::set<std::string> gold_ids;
    std::vector<std::string> retrieved;
};

/// |gold ∩ top-k retrieved| / |gold|.
double recall_at_k(const RetrievalTrial& trial, std::size_t k);

/// Which judge prompt family scores an answer. Sources: question, model
/// answer and gold sources. Reference: question and model answer only.
enum class JudgeTemplate { Sources, Reference };
std::string_view to_string(JudgeTemplate t);
JudgeTemplate parse_judge_template(std::string_view s);

struct JudgeVerdict {
    std::string question_id;
    int score = 0;
    std::string explanation;
    JudgeTemplate judge_template = JudgeTemplate::Sources;
};

struct ParsedScore {
    int score = 0;
    std::string explanation;
};

/// Score is the integer after the last "Score:" token. When the prompt itself
/// ended with "Score:", a response that is just the integer is accepted too.
/// Throws ParseError when no score in {0, 1, 2} can be read.
ParsedScore parse_judge_response(std::string_view response, bool prompt_ends_with_score = false);

JudgeVerdict judge_answer(Provider& provider, const PromptAssets& assets, JudgeTemplate tmpl,
                          const std::string& question_id, const std::string& question,
                          const std::string& candidate_answer, const std::string& model_answer,
                          const std::vector<Source>& sources);

/// 100 * Σscore / (2 * |verdicts|).
double aggregate_judge(const std::vector<JudgeVerdict>& verdicts);

/// Unigram F1 on the shared tokenizer. Both empty -> 1, one empty -> 0.
double rouge1(std::string_view reference, std::string_view candidate);

enum class GroupBy { Style, Modality };
std::string_view to_string(GroupBy g);
GroupBy parse_group_by(std::string_view s);
std::string group_key(const QaSample& s, GroupBy g);

inline constexpr std::string_view kAllGroup = "all";

/// Per-system, per-group means on a 0-100 scale. "all" is the mean over
/// every question, not over groups.
struct Report {
    std::string mode;
    GroupBy group_by = GroupBy::Style;
    std::vector<std::string> groups;  // first-appearance order
    std::map<std::string, std::size_t> group_sizes;
    std::vector<std::string> systems;
    std::map<std::string, std::map<std::string, double>> values;

    std::string to_json() const;
    static Report from_json(std::string_view text);
    /// Fixed-width table, values with one decimal.
    std::string render() const;
    /// System -> "all" value, in system order.
    RankedList ranked(std::string_view group = kAllGroup) const;
};

Report load_report(const std::filesystem::path& path);

/// Returns ranked ids for a question, at least `k` when available.
using SearchFn = std::function<std::vector<std::string>(const QaSample& sample, std::size_t k)>;

struct RetrievalSystem {
    std::string label;
    SearchFn search;
};

/// One system column per (retriever, k), labelled "<label>@<k>".
Report run_retrieval_eval(const std::vector<QaSample>& dataset, const std::vector<RetrievalSystem>& systems,
                          const std::vector<std::size_t>& ks, GroupBy group_by);

/// Ranked ids per question id, from JSONL lines {"question_id", "retrieved"}.
std::map<std::string, std::vector<std::string>> load_run_file(const std::filesystem::path& path);

struct QaEvalResult {
    Report judge;
    Report rouge;
    /// Per system label, verdicts in dataset order.
    std::map<std::string, std::vector<JudgeVerdict>> verdicts;
};

/// predictions: system label -> question id -> predicted answer.
/// Throws if any system lacks a prediction for a dataset question.
QaEvalResult run_qa_eval(const std::vector<QaSample>& dataset,
                         const std::map<std::string, std::map<std::string, std::string>>& predictions,
                         const Corpus& corpus, Provider& judge, const PromptAssets& assets, JudgeTemplate tmpl,
                         GroupBy group_by, unsigned jobs = 1);

/// Predictions from JSONL lines {"question_id", "answer"}.
std::map<std::string, std::string> load_predictions(const std::filesystem::path& path);

std::string verdict_to_json_line(const std::string& system, const JudgeVerdict& v);

}  // namespace smmqg
