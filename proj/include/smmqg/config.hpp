#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "smmqg/eval.hpp"
#include "smmqg/pipeline.hpp"
#include "smmqg/provider.hpp"

namespace smmqg {

struct RetrieverSpec {
    std::string label;
    std::string kind;  // bm25 | dense | run
    std::filesystem::path run_file;
};

struct EvalConfig {
    std::filesystem::path dataset;  // defaults to the generate output
    GroupBy group_by = GroupBy::Style;
    std::vector<std::size_t> ks{5, 10};
    std::vector<RetrieverSpec> retrievers;
    std::map<std::string, std::filesystem::path> predictions;
    JudgeTemplate judge_template = JudgeTemplate::Sources;
    std::filesystem::path report_prefix;  // <prefix>_<mode>.json / .txt
    std::filesystem::path verdicts;
    std::filesystem::path transcript;
};

/// Everything a run needs. Relative paths are resolved against the directory
/// holding the config file when it is loaded.
struct RunConfig {
    std::filesystem::path base_dir;
    std::filesystem::path corpus;
    std::filesystem::path index;
    std::filesystem::path output;
    std::filesystem::path rejections;
    std::filesystem::path transcript;
    std::filesystem::path prompts_dir;
    std::filesystem::path styles_dir;
    ProviderConfig provider;
    std::vector<std::string> styles;
    PipelineConfig pipeline;
    std::size_t k_seed = 5;
    double beta = 0.1;
    std::size_t min_text_chars = kDefaultMinTextChars;
    FewShotMode few_shot_mode = FewShotMode::Turns;
    EvalConfig eval;
};

/// Shipped prompt and style directory, fixed at build time.
std::filesystem::path default_data_dir();

RunConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& path);

}  // namespace smmqg
