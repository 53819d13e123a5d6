#include "smmqg/provider.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <json.hpp>

#include "smmqg/error.hpp"
#include "smmqg/text.hpp"

namespace smmqg {

using json = nlohmann::json;

bool EmbeddingVector::all_finite() const {
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

std::string_view to_string(Role r) {
    switch (r) {
        case Role::System:
            return "system";
        case Role::User:
            return "user";
        case Role::Assistant:
            return "assistant";
    }
    return "user";
}

namespace {

json request_json(const CompletionRequest& req) {
    json turns = json::array();
    for (const auto& t : req.turns) {
        turns.push_back({{"role", to_string(t.role)}, {"text", t.text}, {"attachments", t.attachments}});
    }
    return {{"tag", req.tag},
            {"temperature", req.temperature},
            {"max_tokens", req.max_tokens},
            {"turns", std::move(turns)}};
}

}  // namespace

bool CompletionRequest::has_attachments() const {
    return std::any_of(turns.begin(), turns.end(), [](const ChatTurn& t) { return !t.attachments.empty(); });
}

void CompletionRequest::validate() const {
    if (turns.empty()) {
        throw ValidationError("completion request has no turns");
    }
    if (temperature < 0.0) {
        throw ValidationError("temperature must be >= 0");
    }
    if (max_tokens <= 0) {
        throw ValidationError("max_tokens must be positive");
    }
    for (std::size_t i = 0; i < turns.size(); ++i) {
        const auto& t = turns[i];
        if (t.role == Role::System && i != 0) {
            throw ValidationError("system turn must be first");
        }
        if (!t.attachments.empty() && t.role != Role::User) {
            throw ValidationError("attachments are only allowed on user turns");
        }
    }
}

std::string CompletionRequest::hash() const { return hex64(fnv1a64(request_json(*this).dump())); }

std::string CompletionRequest::flattened_text() const {
    std::vector<std::string> parts;
    parts.reserve(turns.size());
    for (const auto& t : turns) {
        parts.push_back(t.text);
    }
    return join(parts, "\n\n");
}

std::string embedding_request_hash(const std::vector<std::string>& texts) {
    return hex64(fnv1a64(json{{"embed", texts}}.dump()));
}

std::vector<EmbeddingVector> ModelBackend::embed(const std::vector<std::string>&) {
    throw CapabilityError("backend does not provide embeddings");
}

// ---------------------------------------------------------------------------

Transcript::Transcript(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) {
        throw ValidationError("cannot open transcript: " + path.string());
    }
}

void Transcript::record_completion(const CompletionRequest& req, const std::string& hash,
                                   const std::string& response) {
    json rec = {{"kind", "complete"},
                {"tag", req.tag},
                {"request_hash", hash},
                {"request", request_json(req)},
                {"response", response}};
    append(rec.dump());
}

void Transcript::record_embedding(const std::vector<std::string>& texts, const std::string& hash,
                                  const std::vector<EmbeddingVector>& vectors) {
    json vecs = json::array();
    for (const auto& v : vectors) {
        vecs.push_back(v.values);
    }
    json rec = {{"kind", "embed"}, {"request_hash", hash}, {"texts", texts}, {"vectors", std::move(vecs)}};
    append(rec.dump());
}

void Transcript::append(const std::string& line) {
    std::lock_guard lock(mutex_);
    out_ << line << '\n';
    out_.flush();
}

// ---------------------------------------------------------------------------

Provider::Provider(std::unique_ptr<ModelBackend> backend, int max_concurrency, RetryPolicy retry,
                   std::shared_ptr<Transcript> transcript)
    : backend_(std::move(backend)),
      caps_(backend_->capabilities()),
      retry_(retry),
      transcript_(std::move(transcript)),
      slots_(std::clamp<std::ptrdiff_t>(max_concurrency, 1, kMaxConcurrency)) {
    if (retry_.max_attempts < 1) {
        retry_.max_attempts = 1;
    }
}

template <typename Fn>
auto Provider::with_retries(std::string_view what, Fn&& fn) {
    std::string last_error;
    for (int attempt = 1; attempt <= retry_.max_attempts; ++attempt) {
        slots_.acquire();
        try {
            auto result = fn();
            slots_.release();
            return result;
        } catch (const TransientError& e) {
            slots_.release();
            last_error = e.what();
        } catch (...) {
            slots_.release();
            throw;
        }
        if (attempt < retry_.max_attempts) {
            std::this_thread::sleep_for(retry_.base_delay * (1LL << (attempt - 1)));
        }
    }
    throw TransportError(std::string(what) + " failed after " + std::to_string(retry_.max_attempts) +
                         " attempts: " + last_error);
}

Completion Provider::complete(const CompletionRequest& req) {
    req.validate();
    if (req.has_attachments() && !caps_.supports_images) {
        throw CapabilityError("provider does not accept image attachments (step " + req.tag + ")");
    }
    auto hash = req.hash();
    auto text = with_retries("completion [" + req.tag + "]", [&] { return backend_->complete(req); });
    if (transcript_) {
        transcript_->record_completion(req, hash, text);
    }
    return {std::move(text), std::move(hash)};
}

std::vector<EmbeddingVector> Provider::embed(const std::vector<std::string>& texts) {
    if (!caps_.embedding_dim) {
        throw CapabilityError("provider has no embedding model");
    }
    if (texts.empty()) {
        throw ValidationError("embed called with no texts");
    }
    auto vectors = with_retries("embedding", [&] { return backend_->embed(texts); });
    if (vectors.size() != texts.size()) {
        throw IntegrityError("backend returned " + std::to_string(vectors.size()) + " vectors for " +
                             std::to_string(texts.size()) + " texts");
    }
    for (const auto& v : vectors) {
        if (v.dim() != *caps_.embedding_dim) {
            throw IntegrityError("embedding dim " + std::to_string(v.dim()) + " != declared " +
                                 std::to_string(*caps_.embedding_dim));
        }
        if (!v.all_finite()) {
            throw IntegrityError("embedding contains non-finite values");
        }
    }
    if (transcript_) {
        transcript_->record_embedding(texts, embedding_request_hash(texts), vectors);
    }
    return vectors;
}

// ---------------------------------------------------------------------------

namespace {
bool valid_var_name(std::string_view s) {
    if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) {
        return false;
    }
    return std::all_of(s.begin(), s.end(),
                       [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; });
}
}  // namespace

PromptTemplate PromptTemplate::parse(std::string name, std::string body) {
    PromptTemplate t;
    t.name_ = std::move(name);
    t.body_ = std::move(body);
    std::string literal;
    const auto& b = t.body_;
    for (std::size_t i = 0; i < b.size(); ++i) {
        char c = b[i];
        if (c == '{') {
            if (i + 1 < b.size() && b[i + 1] == '{') {
                literal.push_back('{');
                ++i;
                continue;
            }
            auto close = b.find('}', i + 1);
            if (close == std::string::npos) {
                throw TemplateError("template " + t.name_ + ": unterminated placeholder at offset " +
                                    std::to_string(i));
            }
            auto var = b.substr(i + 1, close - i - 1);
            if (!valid_var_name(var)) {
                throw TemplateError("template " + t.name_ + ": invalid placeholder {" + var + "}");
            }
            if (!literal.empty()) {
                t.pieces_.push_back({false, std::move(literal)});
                literal.clear();
            }
            t.pieces_.push_back({true, var});
            t.required_.insert(var);
            i = close;
        } else if (c == '}') {
            if (i + 1 < b.size() && b[i + 1] == '}') {
                literal.push_back('}');
                ++i;
                continue;
            }
            throw TemplateError("template " + t.name_ + ": stray '}' at offset " + std::to_string(i));
        } else {
            literal.push_back(c);
        }
    }
    if (!literal.empty()) {
        t.pieces_.push_back({false, std::move(literal)});
    }
    return t;
}

std::string PromptTemplate::render(const Vars& vars) const {
    for (const auto& r : required_) {
        if (vars.find(r) == vars.end()) {
            throw TemplateError("missing variable " + r + " for template " + name_);
        }
    }
    std::string out;
    for (const auto& p : pieces_) {
        out += p.is_var ? vars.find(p.text)->second : p.text;
    }
    return out;
}

const std::map<std::string, std::set<std::string, std::less<>>, std::less<>>& PromptCatalog::schema() {
    static const std::map<std::string, std::set<std::string, std::less<>>, std::less<>> s = {
        {"verbalize", {"caption"}},
        {"entity_instruction", {"num_entities"}},
        {"entity_query", {"passage"}},
        {"generate_text_instruction", {"style_prompt", "modality_requirements"}},
        {"generate_image_instruction", {"style_prompt", "modality_requirements"}},
        {"generate_query", {"enumerated_passages"}},
        {"style_about_entity", {"entity"}},
        {"style_entity_as_answer", {"entity"}},
        {"verify_text_instruction", {}},
        {"verify_image_instruction", {}},
        {"verify_query", {"question", "answer", "style_prompt", "enumerated_passages"}},
        {"combine_text_instruction", {}},
        {"combine_image_instruction", {}},
        {"combine_query", {"enumerated_passages", "question_1", "question_2", "answer_1", "answer_2", "entity"}},
        {"judge_text_instruction", {}},
        {"judge_image_instruction", {}},
        {"judge_query", {"question", "candidate_answer", "model_answer", "passages"}},
        {"judge_reference", {"question", "reference", "prediction"}},
    };
    return s;
}

PromptCatalog PromptCatalog::load(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        throw TemplateError("prompt directory not found: " + dir.string());
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".txt") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    PromptCatalog cat;
    for (const auto& f : files) {
        auto body = read_file(f.string());
        // Files end with a newline; the template does not.
        while (!body.empty() && (body.back() == '\n' || body.back() == '\r')) {
            body.pop_back();
        }
        cat.add(PromptTemplate::parse(f.stem().string(), std::move(body)));
    }
    return cat;
}

void PromptCatalog::add(PromptTemplate t) {
    const auto& s = schema();
    if (auto it = s.find(t.name()); it != s.end()) {
        for (const auto& v : t.required_vars()) {
            if (!it->second.contains(v)) {
                throw TemplateError("template " + t.name() + ": unknown placeholder {" + v + "}");
            }
        }
        for (const auto& v : it->second) {
            if (!t.required_vars().contains(v)) {
                throw TemplateError("template " + t.name() + ": missing placeholder {" + v + "}");
            }
        }
    }
    auto name = t.name();
    templates_.insert_or_assign(std::move(name), std::move(t));
}

const PromptTemplate& PromptCatalog::get(std::string_view name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) {
        throw TemplateError("no prompt template named " + std::string(name));
    }
    return it->second;
}

bool PromptCatalog::contains(std::string_view name) const { return templates_.find(name) != templates_.end(); }

FewShotMode parse_few_shot_mode(std::string_view s) {
    if (s == "turns") {
        return FewShotMode::Turns;
    }
    if (s == "inline") {
        return FewShotMode::Inline;
    }
    throw ValidationError("few_shot_mode must be turns or inline, got " + std::string(s));
}

std::vector<ChatTurn> assemble_turns(const std::string& instruction, const PromptTemplate& query,
                                     const std::vector<FewShot>& shots, const Vars& vars,
                                     std::vector<ChatTurn> media_turns, FewShotMode mode) {
    std::vector<ChatTurn> turns;
    auto final_query = query.render(vars);
    if (mode == FewShotMode::Turns) {
        turns.push_back({Role::System, instruction, {}});
        for (const auto& shot : shots) {
            turns.push_back({Role::User, query.render(shot.vars), {}});
            turns.push_back({Role::Assistant, shot.output, {}});
        }
        for (auto& m : media_turns) {
            turns.push_back(std::move(m));
        }
        turns.push_back({Role::User, std::move(final_query), {}});
        return turns;
    }

    std::string preamble = instruction;
    for (std::size_t i = 0; i < shots.size(); ++i) {
        preamble += "\n\nExample " + std::to_string(i + 1) + ":\n" + query.render(shots[i].vars) + " " +
                    shots[i].output;
    }
    if (media_turns.empty()) {
        turns.push_back({Role::User, preamble + "\n\n" + final_query, {}});
        return turns;
    }
    turns.push_back({Role::System, std::move(preamble), {}});
    for (auto& m : media_turns) {
        turns.push_back(std::move(m));
    }
    turns.push_back({Role::User, std::move(final_query), {}});
    return turns;
}

}  // namespace smmqg
