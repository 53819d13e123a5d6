#include <cmath>

#include <json.hpp>

#include "smmqg/error.hpp"
#include "smmqg/provider.hpp"
#include "smmqg/text.hpp"

namespace smmqg {

using json = nlohmann::json;

MockBackend::MockBackend(std::vector<MockRule> rules, Capabilities caps, std::string no_match_response)
    : rules_(std::move(rules)), caps_(caps), no_match_(std::move(no_match_response)) {}

std::vector<MockRule> MockBackend::parse_script(std::string_view jsonl) {
    std::vector<MockRule> rules;
    auto lines = split_lines(jsonl);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        auto line = trim(lines[i]);
        if (line.empty() || line[0] == '#') {
            continue;
        }
        try {
            auto j = json::parse(line);
            MockRule rule;
            rule.response = j.at("response").get<std::string>();
            if (auto m = j.find("match"); m != j.end()) {
                if (m->contains("tag")) {
                    rule.tag = m->at("tag").get<std::string>();
                }
                if (m->contains("hash")) {
                    rule.hash = m->at("hash").get<std::string>();
                }
                if (m->contains("contains")) {
                    rule.contains = m->at("contains").get<std::vector<std::string>>();
                }
            }
            rules.push_back(std::move(rule));
        } catch (const json::exception& e) {
            throw ValidationError("mock script line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return rules;
}

std::string MockBackend::complete(const CompletionRequest& req) {
    const auto haystack = req.flattened_text();
    std::optional<std::string> hash;
    for (const auto& rule : rules_) {
        if (rule.tag && *rule.tag != req.tag) {
            continue;
        }
        if (rule.hash) {
            if (!hash) {
                hash = req.hash();
            }
            if (*rule.hash != *hash) {
                continue;
            }
        }
        bool all = true;
        for (const auto& needle : rule.contains) {
            if (haystack.find(needle) == std::string::npos) {
                all = false;
                break;
            }
        }
        if (all) {
            return rule.response;
        }
    }
    return no_match_;
}

EmbeddingVector hashing_embedding(std::string_view text, std::size_t dim) {
    std::vector<double> v(dim, 0.0);
    for (const auto& tok : tokenize(text)) {
        auto h = fnv1a64(tok);
        v[h % dim] += (h >> 63) != 0 ? -1.0 : 1.0;
    }
    double norm = 0.0;
    for (double x : v) {
        norm += x * x;
    }
    if (norm == 0.0) {
        v[fnv1a64("") % dim] = 1.0;
        return EmbeddingVector(std::move(v));
    }
    norm = std::sqrt(norm);
    for (double& x : v) {
        x /= norm;
    }
    return EmbeddingVector(std::move(v));
}

std::vector<EmbeddingVector> MockBackend::embed(const std::vector<std::string>& texts) {
    if (!caps_.embedding_dim) {
        throw CapabilityError("mock backend configured without embeddings");
    }
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
        out.push_back(hashing_embedding(t, *caps_.embedding_dim));
    }
    return out;
}

// ---------------------------------------------------------------------------

ReplayBackend::ReplayBackend(const std::filesystem::path& transcript) {
    auto contents = read_file(transcript.string());
    auto lines = split_lines(contents);
    caps_.supports_images = true;
    for (std::size_t i = 0; i < lines.size(); ++i) {
        if (trim(lines[i]).empty()) {
            continue;
        }
        try {
            auto j = json::parse(lines[i]);
            auto kind = j.at("kind").get<std::string>();
            auto hash = j.at("request_hash").get<std::string>();
            if (kind == "complete") {
                completions_.emplace(hash, j.at("response").get<std::string>());
            } else if (kind == "embed") {
                std::vector<EmbeddingVector> vecs;
                for (const auto& v : j.at("vectors")) {
                    vecs.emplace_back(v.get<std::vector<double>>());
                }
                if (!vecs.empty() && !caps_.embedding_dim) {
                    caps_.embedding_dim = vecs.front().dim();
                }
                embeddings_.emplace(hash, std::move(vecs));
            }
        } catch (const json::exception& e) {
            throw ValidationError("transcript line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
}

std::string ReplayBackend::complete(const CompletionRequest& req) {
    auto hash = req.hash();
    auto it = completions_.find(hash);
    if (it == completions_.end()) {
        throw IntegrityError("transcript has no response for request " + hash + " (step " + req.tag + ")");
    }
    return it->second;
}

std::vector<EmbeddingVector> ReplayBackend::embed(const std::vector<std::string>& texts) {
    auto hash = embedding_request_hash(texts);
    auto it = embeddings_.find(hash);
    if (it == embeddings_.end()) {
        throw IntegrityError("transcript has no embedding for request " + hash);
    }
    return it->second;
}

// ---------------------------------------------------------------------------

std::unique_ptr<Provider> make_provider(const ProviderConfig& cfg, const std::filesystem::path& base_dir,
                                        std::shared_ptr<Transcript> transcript) {
    auto resolve = [&](const std::string& p) {
        std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    };
    RetryPolicy retry{cfg.max_attempts, std::chrono::milliseconds(cfg.base_delay_ms)};
    std::unique_ptr<ModelBackend> backend;
    if (cfg.backend == "mock") {
        std::vector<MockRule> rules;
        if (!cfg.script.empty()) {
            rules = MockBackend::parse_script(read_file(resolve(cfg.script).string()));
        }
        Capabilities caps{cfg.supports_images, cfg.embedding_dim ? cfg.embedding_dim : std::optional<std::size_t>(64)};
        backend = std::make_unique<MockBackend>(std::move(rules), caps, cfg.no_match_response);
    } else if (cfg.backend == "replay") {
        if (cfg.replay_from.empty()) {
            throw ValidationError("replay backend needs a transcript path");
        }
        backend = std::make_unique<ReplayBackend>(resolve(cfg.replay_from));
    } else if (cfg.backend == "http") {
        HttpSettings s;
        s.endpoint = cfg.endpoint;
        s.model_name = cfg.model_name;
        s.embedding_model = cfg.embedding_model;
        s.supports_images = cfg.supports_images;
        s.embedding_dim = cfg.embedding_dim;
        s.media_root = base_dir;
        if (const char* key = std::getenv(cfg.api_key_env.c_str())) {
            s.api_key = key;
        }
        backend = make_http_backend(std::move(s));
    } else {
        throw ValidationError("unknown provider backend: " + cfg.backend);
    }
    return std::make_unique<Provider>(std::move(backend), cfg.max_concurrency, retry, std::move(transcript));
}

}  // namespace smmqg
