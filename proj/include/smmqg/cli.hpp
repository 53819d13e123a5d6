#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

namespace smmqg {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

struct RunOverrides {
    std::optional<unsigned> jobs;
    std::optional<std::uint64_t> seed;
    /// Redirects every file a command writes into this directory.
    std::optional<std::filesystem::path> out_dir;
};

int cmd_ingest(const std::filesystem::path& corpus, const std::optional<std::filesystem::path>& out,
               std::size_t min_text_chars, std::ostream& out_stream, std::ostream& err);

/// With `replay` set, every model call is answered from a recorded transcript
/// (an empty path means the config's own transcript) and nothing is recorded.
int cmd_generate(const std::filesystem::path& config, const RunOverrides& overrides,
                 const std::optional<std::filesystem::path>& replay, std::ostream& out, std::ostream& err);

/// mode: retrieval | qa.
int cmd_evaluate(const std::filesystem::path& config, const std::string& mode, const RunOverrides& overrides,
                 std::ostream& out, std::ostream& err);

int cmd_concur(const std::filesystem::path& report_a, const std::filesystem::path& report_b,
               const std::string& group, std::ostream& out, std::ostream& err);

/// test: mwu | fisher. Input is JSONL {"group", "value"} with two groups.
int cmd_stats(const std::filesystem::path& input, const std::string& test, std::ostream& out, std::ostream& err);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace smmqg
