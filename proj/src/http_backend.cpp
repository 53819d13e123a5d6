#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <openssl/evp.h>

#include <json.hpp>

#include "smmqg/error.hpp"
#include "smmqg/provider.hpp"
#include "smmqg/text.hpp"

namespace smmqg {

namespace {

using json = nlohmann::json;

std::string base64(std::string_view bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    auto n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                             reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::string mime_for(const std::filesystem::path& p) {
    auto ext = to_lower(p.extension().string());
    if (ext == ".png") return "image/png";
    if (ext == ".gif") return "image/gif";
    if (ext == ".webp") return "image/webp";
    return "image/jpeg";
}

class HttpBackend : public ModelBackend {
public:
    explicit HttpBackend(HttpSettings s) : s_(std::move(s)) {
        auto scheme_end = s_.endpoint.find("://");
        if (scheme_end == std::string::npos) {
            throw ValidationError("http endpoint must include a scheme: " + s_.endpoint);
        }
        auto path_start = s_.endpoint.find('/', scheme_end + 3);
        if (path_start == std::string::npos) {
            origin_ = s_.endpoint;
        } else {
            origin_ = s_.endpoint.substr(0, path_start);
            prefix_ = s_.endpoint.substr(path_start);
        }
        while (!prefix_.empty() && prefix_.back() == '/') {
            prefix_.pop_back();
        }
    }

    Capabilities capabilities() const override { return {s_.supports_images, s_.embedding_dim}; }

    std::string complete(const CompletionRequest& req) override {
        json messages = json::array();
        for (const auto& turn : req.turns) {
            if (turn.attachments.empty()) {
                messages.push_back({{"role", to_string(turn.role)}, {"content", turn.text}});
                continue;
            }
            json parts = json::array();
            parts.push_back({{"type", "text"}, {"text", turn.text}});
            for (const auto& ref : turn.attachments) {
                parts.push_back({{"type", "image_url"}, {"image_url", {{"url", data_url(ref)}}}});
            }
            messages.push_back({{"role", to_string(turn.role)}, {"content", std::move(parts)}});
        }
        json body = {{"model", s_.model_name},
                     {"messages", std::move(messages)},
                     {"temperature", req.temperature},
                     {"max_tokens", req.max_tokens}};
        auto reply = post("/chat/completions", body);
        try {
            return reply.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const json::exception& e) {
            throw IntegrityError(std::string("malformed chat response: ") + e.what());
        }
    }

    std::vector<EmbeddingVector> embed(const std::vector<std::string>& texts) override {
        json body = {{"model", s_.embedding_model.empty() ? s_.model_name : s_.embedding_model}, {"input", texts}};
        auto reply = post("/embeddings", body);
        std::vector<EmbeddingVector> out(texts.size());
        try {
            for (const auto& item : reply.at("data")) {
                auto idx = item.value("index", std::size_t{0});
                if (idx >= out.size()) {
                    throw IntegrityError("embedding index out of range");
                }
                out[idx] = EmbeddingVector(item.at("embedding").get<std::vector<double>>());
            }
        } catch (const json::exception& e) {
            throw IntegrityError(std::string("malformed embedding response: ") + e.what());
        }
        return out;
    }

private:
    std::string data_url(const std::string& ref) const {
        if (ref.starts_with("http://") || ref.starts_with("https://") || ref.starts_with("data:")) {
            return ref;
        }
        std::filesystem::path p(ref);
        if (!p.is_absolute()) {
            p = s_.media_root / p;
        }
        return "data:" + mime_for(p) + ";base64," + base64(read_file(p.string()));
    }

    json post(const std::string& path, const json& body) {
        httplib::Client client(origin_);
        client.set_read_timeout(s_.timeout_seconds, 0);
        client.set_connection_timeout(10, 0);
        httplib::Headers headers;
        if (!s_.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + s_.api_key);
        }
        auto res = client.Post(prefix_ + path, headers, body.dump(), "application/json");
        if (!res) {
            throw TransientError("http " + path + ": " + httplib::to_string(res.error()));
        }
        if (res->status == 429 || res->status >= 500) {
            throw TransientError("http " + path + ": status " + std::to_string(res->status));
        }
        if (res->status != 200) {
            throw TransportError("http " + path + ": status " + std::to_string(res->status) + ": " + res->body);
        }
        try {
            return json::parse(res->body);
        } catch (const json::exception& e) {
            throw IntegrityError("http " + path + ": invalid JSON: " + e.what());
        }
    }

    HttpSettings s_;
    std::string origin_;
    std::string prefix_;
};

}  // namespace

std::unique_ptr<ModelBackend> make_http_backend(HttpSettings settings) {
    return std::make_unique<HttpBackend>(std::move(settings));
}

}  // namespace smmqg
