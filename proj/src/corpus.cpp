#include "smmqg/corpus.hpp"

#include <algorithm>

#include <json.hpp>

#include "smmqg/error.hpp"
#include "smmqg/provider.hpp"
#include "smmqg/text.hpp"

namespace smmqg {

using ojson = nlohmann::ordered_json;

std::string_view to_string(Modality m) {
    switch (m) {
        case Modality::Text:
            return "Text";
        case Modality::Table:
            return "Table";
        case Modality::Image:
            return "Image";
    }
    return "Text";
}

std::string_view wire_name(Modality m) {
    switch (m) {
        case Modality::Text:
            return "text";
        case Modality::Table:
            return "table";
        case Modality::Image:
            return "image";
    }
    return "text";
}

Modality parse_modality(std::string_view name) {
    auto n = to_lower(name);
    if (n == "text") return Modality::Text;
    if (n == "table") return Modality::Table;
    if (n == "image") return Modality::Image;
    throw ValidationError("unknown modality: " + std::string(name));
}

namespace {

void check_source(const Source& s) {
    if (s.id.empty()) {
        throw ValidationError("source with empty id");
    }
    if (s.modality == Modality::Image) {
        if (!s.caption || s.caption->empty()) {
            throw ValidationError("image source " + s.id + " is missing caption");
        }
        if (!s.image_ref || s.image_ref->empty()) {
            throw ValidationError("image source " + s.id + " is missing image_ref");
        }
        return;
    }
    if (s.caption || s.image_ref || s.verbalisation) {
        throw ValidationError("non-image source " + s.id + " carries image fields");
    }
    if (s.modality == Modality::Table) {
        if (!s.title || s.title->empty()) {
            throw ValidationError("table source " + s.id + " is missing title");
        }
        if (!s.text.starts_with(*s.title + "\n")) {
            throw ValidationError("table source " + s.id + " does not start with its title line");
        }
    }
}

}  // namespace

Corpus Corpus::from_sources(std::vector<Source> sources) {
    Corpus c;
    c.by_id_.reserve(sources.size());
    for (std::size_t i = 0; i < sources.size(); ++i) {
        check_source(sources[i]);
        if (!c.by_id_.emplace(sources[i].id, i).second) {
            throw ValidationError("duplicate id " + sources[i].id);
        }
        ++c.counts_[static_cast<std::size_t>(sources[i].modality)];
    }
    c.sources_ = std::move(sources);
    return c;
}

const Source* Corpus::find(std::string_view id) const {
    auto it = by_id_.find(std::string(id));
    return it == by_id_.end() ? nullptr : &sources_[it->second];
}

const Source& Corpus::at(std::string_view id) const {
    if (const auto* s = find(id)) {
        return *s;
    }
    throw ValidationError("unknown source id " + std::string(id));
}

std::uint64_t Corpus::content_hash() const { return fnv1a64(corpus_to_jsonl(*this)); }

std::string source_to_json_line(const Source& src) {
    ojson j;
    j["id"] = src.id;
    j["modality"] = wire_name(src.modality);
    if (src.title) j["title"] = *src.title;
    if (src.modality != Modality::Image || !src.text.empty()) j["text"] = src.text;
    if (src.caption) j["caption"] = *src.caption;
    if (src.verbalisation) j["verbalisation"] = *src.verbalisation;
    if (src.image_ref) j["image_ref"] = *src.image_ref;
    return j.dump();
}

std::string corpus_to_jsonl(const Corpus& corpus) {
    std::string out;
    for (const auto& s : corpus.sources()) {
        out += source_to_json_line(s);
        out += '\n';
    }
    return out;
}

Corpus parse_corpus(std::string_view jsonl, std::size_t min_text_chars) {
    std::vector<Source> sources;
    std::unordered_map<std::string, std::size_t> seen;
    auto lines = split_lines(jsonl);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const auto line_no = std::to_string(i + 1);
        if (trim(lines[i]).empty()) {
            continue;
        }
        ojson j;
        try {
            j = ojson::parse(lines[i]);
        } catch (const ojson::parse_error& e) {
            throw ValidationError("line " + line_no + ": invalid JSON: " + e.what());
        }
        if (!j.is_object()) {
            throw ValidationError("line " + line_no + ": record is not an object");
        }
        auto get_str = [&](const char* field) -> std::optional<std::string> {
            auto it = j.find(field);
            if (it == j.end() || it->is_null()) {
                return std::nullopt;
            }
            if (!it->is_string()) {
                throw ValidationError("line " + line_no + ": field " + field + " must be a string");
            }
            return it->get<std::string>();
        };
        Source s;
        auto id = get_str("id");
        if (!id || id->empty()) {
            throw ValidationError("line " + line_no + ": missing field id");
        }
        s.id = *id;
        auto modality = get_str("modality");
        if (!modality) {
            throw ValidationError("line " + line_no + ": missing field modality");
        }
        try {
            s.modality = parse_modality(*modality);
        } catch (const ValidationError& e) {
            throw ValidationError("line " + line_no + ": field modality: " + e.what());
        }
        s.title = get_str("title");
        s.text = get_str("text").value_or("");
        s.caption = get_str("caption");
        s.verbalisation = get_str("verbalisation");
        s.image_ref = get_str("image_ref");

        if (s.modality == Modality::Image) {
            if (!s.caption || s.caption->empty()) {
                throw ValidationError("line " + line_no + ": image record " + s.id + " missing field caption");
            }
            if (!s.image_ref || s.image_ref->empty()) {
                throw ValidationError("line " + line_no + ": image record " + s.id + " missing field image_ref");
            }
        } else {
            for (const char* f : {"caption", "verbalisation", "image_ref"}) {
                if (get_str(f)) {
                    throw ValidationError("line " + line_no + ": field " + std::string(f) +
                                          " is only valid on image records");
                }
            }
            if (s.text.empty()) {
                throw ValidationError("line " + line_no + ": missing field text");
            }
        }
        if (s.modality == Modality::Table) {
            if (!s.title || s.title->empty()) {
                throw ValidationError("line " + line_no + ": table record " + s.id + " missing field title");
            }
            if (!s.text.starts_with(*s.title + "\n")) {
                s.text = *s.title + "\n" + s.text;
            }
        }
        if (!seen.emplace(s.id, i).second) {
            throw ValidationError("duplicate id " + s.id + " (line " + line_no + ")");
        }
        if (s.modality == Modality::Text && utf8_length(s.text) < min_text_chars) {
            continue;
        }
        sources.push_back(std::move(s));
    }
    return Corpus::from_sources(std::move(sources));
}

Corpus ingest_corpus(const std::string& path, std::size_t min_text_chars) {
    return parse_corpus(read_file(path), min_text_chars);
}

std::string serialize_table(std::string_view title, const std::vector<std::string>& header,
                            const std::vector<std::vector<std::string>>& rows) {
    auto row_line = [](const std::vector<std::string>& cells) {
        std::vector<std::string> escaped;
        escaped.reserve(cells.size());
        for (auto cell : cells) {
            std::replace(cell.begin(), cell.end(), '|', '/');
            escaped.push_back(std::move(cell));
        }
        return join(escaped, " | ");
    };
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != header.size()) {
            throw ValidationError("table row " + std::to_string(r) + " has " + std::to_string(rows[r].size()) +
                                  " cells, header has " + std::to_string(header.size()));
        }
    }
    std::string out(title);
    out += '\n';
    out += row_line(header);
    for (const auto& row : rows) {
        out += '\n';
        out += row_line(row);
    }
    return out;
}

std::string image_search_text(const Source& src) {
    if (src.modality != Modality::Image) {
        throw ModalityError("image_search_text on " + std::string(wire_name(src.modality)) + " source " + src.id);
    }
    const auto caption = src.caption.value_or("");
    if (!src.verbalisation || src.verbalisation->empty()) {
        return caption;
    }
    return caption + ": " + *src.verbalisation;
}

std::string search_text(const Source& src) {
    switch (src.modality) {
        case Modality::Text:
            return src.title && !src.title->empty() ? *src.title + ": " + src.text : src.text;
        case Modality::Table:
            return src.text;
        case Modality::Image:
            return image_search_text(src);
    }
    return src.text;
}

std::string verbalize_image(Provider& provider, const PromptTemplate& prompt, const Source& src) {
    if (src.modality != Modality::Image) {
        throw ModalityError("verbalize_image on non-image source " + src.id);
    }
    if (!provider.capabilities().supports_images) {
        throw CapabilityError("verbalisation needs an image-capable provider");
    }
    CompletionRequest req;
    req.tag = "verbalize";
    req.temperature = 0.0;
    req.turns.push_back({Role::User, prompt.render({{"caption", src.caption.value_or("")}}), {*src.image_ref}});
    auto reply = provider.complete(req);
    if (trim(reply.text).empty()) {
        throw ParseError("empty verbalisation for " + src.id);
    }
    return reply.text;
}

Corpus verbalize_missing(Provider& provider, const PromptTemplate& prompt, const Corpus& corpus) {
    auto sources = corpus.sources();
    for (auto& s : sources) {
        if (s.modality == Modality::Image && (!s.verbalisation || s.verbalisation->empty())) {
            s.verbalisation = verbalize_image(provider, prompt, s);
        }
    }
    return Corpus::from_sources(std::move(sources));
}

}  // namespace smmqg
