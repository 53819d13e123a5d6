#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "smmqg/embedding.hpp"

namespace smmqg {

enum class Role { System, User, Assistant };
std::string_view to_string(Role r);

struct ChatTurn {
    Role role = Role::User;
    std::string text;
    /// Image locators. Only valid on user turns.
    std::vector<std::string> attachments;
};

struct CompletionRequest {
    std::vector<ChatTurn> turns;
    double temperature = 0.0;
    int max_tokens = 1024;
    /// Pipeline-step label: extract_entity, generate, verify, ...
    std::string tag;

    bool has_attachments() const;
    /// Throws ValidationError when turn-structure invariants are broken.
    void validate() const;
    /// Stable digest over tag, decoding parameters and all turns.
    std::string hash() const;
    /// All turn texts joined by blank lines; what mock scripts match against.
    std::string flattened_text() const;
};

struct Completion {
    std::string text;
    std::string request_hash;
};

struct Capabilities {
    bool supports_images = false;
    std::optional<std::size_t> embedding_dim;
};

/// A concrete model backend (mock, replay, http). Backends signal retryable
/// failures with TransientError; the Provider wrapper owns retries.
class ModelBackend {
public:
    virtual ~ModelBackend() = default;

    virtual Capabilities capabilities() const = 0;
    virtual std::string complete(const CompletionRequest& req) = 0;
    virtual std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts);
};

/// Appends request/response records as JSON lines. Thread-safe.
class Transcript {
public:
    explicit Transcript(const std::filesystem::path& path);

    void record_completion(const CompletionRequest& req, const std::string& hash,
                           const std::string& response);
    void record_embedding(const std::vector<std::string>& texts, const std::string& hash,
                          const std::vector<EmbeddingVector>& vectors);

private:
    void append(const std::string& line);

    std::mutex mutex_;
    std::ofstream out_;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds base_delay{1000};
};

/// Capability checks, retries with exponential backoff, a concurrency cap
/// and transcript logging around a ModelBackend. Safe to call from many
/// threads as long as the backend is.
class Provider {
public:
    static constexpr std::ptrdiff_t kMaxConcurrency = 256;

    Provider(std::unique_ptr<ModelBackend> backend, int max_concurrency = 4,
             RetryPolicy retry = {}, std::shared_ptr<Transcript> transcript = nullptr);

    const Capabilities& capabilities() const { return caps_; }

    Completion complete(const CompletionRequest& req);
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts);

    void set_transcript(std::shared_ptr<Transcript> transcript) { transcript_ = std::move(transcript); }

private:
    template <typename Fn>
    auto with_retries(std::string_view what, Fn&& fn);

    std::unique_ptr<ModelBackend> backend_;
    Capabilities caps_;
    RetryPolicy retry_;
    std::shared_ptr<Transcript> transcript_;
    std::counting_semaphore<kMaxConcurrency> slots_;
};

std::string embedding_request_hash(const std::vector<std::string>& texts);

// ---------------------------------------------------------------------------
// Prompt templates

using Vars = std::map<std::string, std::string, std::less<>>;

/// Body with {name} placeholders; "{{" and "}}" are literal braces.
class PromptTemplate {
public:
    /// Throws TemplateError on unbalanced braces or bad placeholder names.
    static PromptTemplate parse(std::string name, std::string body);

    const std::string& name() const { return name_; }
    const std::string& body() const { return body_; }
    const std::set<std::string, std::less<>>& required_vars() const { return required_; }

    /// Substitutes every placeholder. Values are inserted verbatim.
    std::string render(const Vars& vars) const;

private:
    struct Piece {
        bool is_var;
        std::string text;
    };

    std::string name_;
    std::string body_;
    std::set<std::string, std::less<>> required_;
    std::vector<Piece> pieces_;
};

/// Templates loaded from a directory of <name>.txt files. Known template
/// names are checked against their expected placeholder sets at load time.
class PromptCatalog {
public:
    static PromptCatalog load(const std::filesystem::path& dir);
    void add(PromptTemplate t);

    const PromptTemplate& get(std::string_view name) const;
    bool contains(std::string_view name) const;

    /// Expected placeholders for the shipped template names.
    static const std::map<std::string, std::set<std::string, std::less<>>, std::less<>>& schema();

private:
    std::map<std::string, PromptTemplate, std::less<>> templates_;
};

/// A worked example: variables for the query template plus the expected output.
struct FewShot {
    Vars vars;
    std::string output;
};

enum class FewShotMode { Turns, Inline };
FewShotMode parse_few_shot_mode(std::string_view s);

/// Builds the conversation for one step. Turns mode: system instruction,
/// alternating user/assistant examples, media turns, then the query.
/// Inline mode: instruction, examples and query in one user turn (media
/// turns, when present, sit between a system instruction turn and the query).
std::vector<ChatTurn> assemble_turns(const std::string& instruction, const PromptTemplate& query,
                                     const std::vector<FewShot>& shots, const Vars& vars,
                                     std::vector<ChatTurn> media_turns, FewShotMode mode);

// ---------------------------------------------------------------------------
// Backends

struct MockRule {
    std::optional<std::string> tag;
    std::optional<std::string> hash;
    std::vector<std::string> contains;
    std::string response;
};

/// Deterministic scripted backend. Chat responses come from the first rule
/// whose tag/hash/substrings all match; embeddings are signed feature hashes
/// of the token stream.
class MockBackend : public ModelBackend {
public:
    MockBackend(std::vector<MockRule> rules, Capabilities caps,
                std::string no_match_response = "None");

    static std::vector<MockRule> parse_script(std::string_view jsonl);

    Capabilities capabilities() const override { return caps_; }
    std::string complete(const CompletionRequest& req) override;
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;

private:
    std::vector<MockRule> rules_;
    Capabilities caps_;
    std::string no_match_;
};

/// Bag-of-words feature hashing, unit-normalized. Never returns a zero vector.
EmbeddingVector hashing_embedding(std::string_view text, std::size_t dim);

/// Answers from a previously written transcript, keyed by request hash.
class ReplayBackend : public ModelBackend {
public:
    explicit ReplayBackend(const std::filesystem::path& transcript);

    Capabilities capabilities() const override { return caps_; }
    std::string complete(const CompletionRequest& req) override;
    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override;

private:
    std::map<std::string, std::string> completions_;
    std::map<std::string, std::vector<EmbeddingVector>> embeddings_;
    Capabilities caps_;
};

struct HttpSettings {
    std::string endpoint;  // e.g. https://api.openai.com/v1
    std::string api_key;
    std::string model_name;
    std::string embedding_model;
    bool supports_images = true;
    std::optional<std::size_t> embedding_dim;
    std::filesystem::path media_root;
    int timeout_seconds = 120;
};

/// OpenAI-compatible chat-completions and embeddings client.
std::unique_ptr<ModelBackend> make_http_backend(HttpSettings settings);

struct ProviderConfig {
    std::string backend = "mock";  // mock | replay | http
    std::string endpoint;
    std::string api_key_env = "SMMQG_API_KEY";
    std::string model_name;
    std::string embedding_model;
    std::string script;       // mock
    std::string replay_from;  // replay
    std::string no_match_response = "None";
    bool supports_images = true;
    std::optional<std::size_t> embedding_dim;
    int max_concurrency = 4;
    int max_attempts = 3;
    int base_delay_ms = 1000;
};

/// Relative paths resolve against base_dir.
std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg,
                                        const std::filesystem::path& base_dir,
                                        std::shared_ptr<Transcript> transcript);

}  // namespace smmqg
