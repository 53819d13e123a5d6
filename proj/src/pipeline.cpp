#include "smmqg/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include <json.hpp>

#include "smmqg/error.hpp"
#include "smmqg/multihop.hpp"
#include "smmqg/parallel.hpp"
#include "smmqg/text.hpp"

namespace smmqg {

using ojson = nlohmann::ordered_json;

int ModalityRequirement::count(Modality m) const {
    switch (m) {
        case Modality::Text:
            return text;
        case Modality::Table:
            return table;
        case Modality::Image:
            return image;
    }
    return 0;
}

int& ModalityRequirement::count(Modality m) {
    switch (m) {
        case Modality::Table:
            return table;
        case Modality::Image:
            return image;
        case Modality::Text:
            break;
    }
    return text;
}

void ModalityRequirement::validate() const {
    if (text < 0 || table < 0 || image < 0) {
        throw ValidationError("modality requirement has a negative count: " + describe());
    }
    if (total() < 1) {
        throw ValidationError("modality requirement must ask for at least one source");
    }
}

std::string ModalityRequirement::describe() const {
    std::vector<std::string> parts;
    for (auto m : kAllModalities) {
        if (count(m) != 0) {
            parts.push_back(std::to_string(count(m)) + " " + std::string(wire_name(m)));
        }
    }
    return join(parts, ", ");
}

std::string ModalityRequirement::label() const {
    std::vector<std::string> parts;
    for (auto m : kAllModalities) {
        if (count(m) > 0) {
            parts.emplace_back(to_string(m));
        }
    }
    return join(parts, "-");
}

ModalityRequirement tally(const std::vector<std::string>& ids, const Corpus& corpus) {
    ModalityRequirement t;
    for (const auto& id : ids) {
        ++t.count(corpus.at(id).modality);
    }
    return t;
}

bool QuestionStyle::allows(const ModalityRequirement& m) const {
    return std::find(allowed_modalities.begin(), allowed_modalities.end(), m) != allowed_modalities.end();
}

namespace {

std::vector<FewShot> parse_few_shots(const ojson& arr, const std::string& where) {
    if (!arr.is_array()) {
        throw ValidationError(where + " must be an array");
    }
    std::vector<FewShot> shots;
    for (const auto& item : arr) {
        if (!item.is_object() || !item.contains("output") || !item["output"].is_string()) {
            throw ValidationError(where + ": each example needs a string output");
        }
        FewShot shot;
        shot.output = item["output"].get<std::string>();
        if (item.contains("vars")) {
            for (const auto& [k, v] : item["vars"].items()) {
                if (!v.is_string()) {
                    throw ValidationError(where + ": example variable " + k + " must be a string");
                }
                shot.vars.emplace(k, v.get<std::string>());
            }
        }
        shots.push_back(std::move(shot));
    }
    return shots;
}

ModalityRequirement parse_requirement(const ojson& j, const std::string& where) {
    if (!j.is_array() || j.size() != 3) {
        throw ValidationError(where + ": requirement must be [text, table, image]");
    }
    std::array<int, 3> a{};
    for (std::size_t i = 0; i < 3; ++i) {
        if (!j[i].is_number_integer()) {
            throw ValidationError(where + ": requirement entries must be integers");
        }
        a[i] = j[i].get<int>();
    }
    auto m = ModalityRequirement::from_array(a);
    m.validate();
    return m;
}

std::string padded_id(std::size_t n) {
    auto digits = std::to_string(n);
    if (digits.size() < 4) {
        digits.insert(0, 4 - digits.size(), '0');
    }
    return "q" + digits;
}

Rejection reject(RejectionStage stage, std::string detail) {
    Rejection r;
    r.stage = stage;
    r.detail = std::move(detail);
    return r;
}

std::vector<std::string> numbered_labels(std::size_t n) {
    std::vector<std::string> labels;
    labels.reserve(n);
    for (std::size_t i = 1; i <= n; ++i) {
        labels.push_back(std::to_string(i));
    }
    return labels;
}

std::string strip_entity_line(std::string line) {
    line = trim(line);
    while (!line.empty() && (line[0] == '-' || line[0] == '*' || line[0] == '#')) {
        line = trim(line.substr(1));
    }
    std::size_t digits = 0;
    while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) {
        ++digits;
    }
    if (digits > 0 && digits < line.size() && (line[digits] == '.' || line[digits] == ')')) {
        line = trim(line.substr(digits + 1));
    }
    if (starts_with_ci(line, "entity:")) {
        line = trim(line.substr(7));
    }
    auto is_quote = [](char c) { return c == '"' || c == '\''; };
    while (line.size() >= 2 && is_quote(line.front()) && line.back() == line.front()) {
        line = trim(line.substr(1, line.size() - 2));
    }
    return line;
}

}  // namespace

QuestionStyle parse_style(std::string_view json_text) {
    ojson j;
    try {
        j = ojson::parse(json_text);
    } catch (const ojson::parse_error& e) {
        throw ValidationError(std::string("style file is not valid JSON: ") + e.what());
    }
    QuestionStyle s;
    if (!j.contains("name") || !j["name"].is_string() || j["name"].get<std::string>().empty()) {
        throw ValidationError("style needs a nonempty name");
    }
    s.name = j["name"].get<std::string>();
    const auto where = "style " + s.name;
    if (!j.contains("description") || !j["description"].is_string()) {
        throw ValidationError(where + " needs a description");
    }
    s.description = j["description"].get<std::string>();
    s.few_shots = parse_few_shots(j.value("few_shots", ojson::array()), where + " few_shots");
    if (s.few_shots.size() != 3) {
        throw ValidationError(where + " must have exactly 3 few-shot examples, found " +
                              std::to_string(s.few_shots.size()));
    }
    const auto allowed = j.value("allowed_modalities", ojson::array());
    for (const auto& a : allowed) {
        s.allowed_modalities.push_back(parse_requirement(a, where));
    }
    if (s.allowed_modalities.empty()) {
        throw ValidationError(where + " lists no allowed modalities");
    }
    s.multihop = j.value("multihop", false);
    if (j.contains("intermediate_few_shots")) {
        s.intermediate_few_shots = parse_few_shots(j["intermediate_few_shots"], where + " intermediate_few_shots");
    }
    return s;
}

QuestionStyle load_style(const std::filesystem::path& path) { return parse_style(read_file(path.string())); }

PromptAssets PromptAssets::load(const std::filesystem::path& dir, FewShotMode mode) {
    PromptAssets a;
    a.catalog = PromptCatalog::load(dir);
    a.mode = mode;
    const auto shots_path = dir / "entity_few_shots.json";
    ojson j;
    try {
        j = ojson::parse(read_file(shots_path.string()));
    } catch (const ojson::parse_error& e) {
        throw ValidationError(shots_path.string() + ": " + e.what());
    }
    a.entity_few_shots = parse_few_shots(j, shots_path.string());
    return a;
}

std::vector<std::string> CandidateSet::ids() const {
    std::vector<std::string> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) {
        out.push_back(c.source.id);
    }
    return out;
}

std::vector<Source> CandidateSet::sources() const {
    std::vector<Source> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) {
        out.push_back(c.source);
    }
    return out;
}

std::string_view to_string(RejectionStage s) {
    switch (s) {
        case RejectionStage::Refusal:
            return "Refusal";
        case RejectionStage::ModalityMismatch:
            return "ModalityMismatch";
        case RejectionStage::StyleCheckFail:
            return "StyleCheckFail";
        case RejectionStage::CorrectnessFail:
            return "CorrectnessFail";
        case RejectionStage::ParseFail:
            return "ParseFail";
    }
    return "ParseFail";
}

std::vector<std::size_t> parse_citations(std::string_view citation, std::size_t n) {
    static const std::set<std::string, std::less<>> filler{"passage", "passages", "image", "images",
                                                           "source",  "sources",  "and",   "citation"};
    std::vector<std::size_t> out;
    std::size_t i = 0;
    while (i < citation.size()) {
        const auto c = static_cast<unsigned char>(citation[i]);
        if (std::isdigit(c)) {
            std::size_t j = i;
            while (j < citation.size() && std::isdigit(static_cast<unsigned char>(citation[j]))) {
                ++j;
            }
            const auto digits = citation.substr(i, j - i);
            if (digits.size() > 9) {
                throw ParseError("citation number too large: " + std::string(digits));
            }
            const auto k = static_cast<std::size_t>(std::stoul(std::string(digits)));
            if (k < 1 || k > n) {
                throw ParseError("citation " + std::to_string(k) + " outside 1.." + std::to_string(n));
            }
            if (std::find(out.begin(), out.end(), k) == out.end()) {
                out.push_back(k);
            }
            i = j;
        } else if (std::isalpha(c)) {
            std::size_t j = i;
            while (j < citation.size() && std::isalpha(static_cast<unsigned char>(citation[j]))) {
                ++j;
            }
            const auto word = to_lower(citation.substr(i, j - i));
            if (!filler.contains(word)) {
                throw ParseError("unexpected word in citation: " + word);
            }
            i = j;
        } else if (std::isspace(c) || std::string_view(",;&.:#()[]<>").find(static_cast<char>(c)) !=
                                          std::string_view::npos) {
            ++i;
        } else {
            throw ParseError("unexpected character in citation: " + std::string(1, static_cast<char>(c)));
        }
    }
    if (out.empty()) {
        throw ParseError("empty citation");
    }
    return out;
}

Outcome<ParsedQa> parse_generation(std::string_view response, std::size_t n_candidates) {
    auto t = trim(response);
    if (t.empty()) {
        return reject(RejectionStage::ParseFail, "empty generation response");
    }
    if (is_refusal(t)) {
        return reject(RejectionStage::Refusal, "generation declined");
    }
    if (starts_with_ci(t, "question | answer | citation")) {
        auto nl = t.find('\n');
        t = nl == std::string::npos ? std::string() : trim(t.substr(nl + 1));
    }
    if (!t.empty() && t.front() == '<') t = trim(t.substr(1));
    if (!t.empty() && t.back() == '>') t = trim(t.substr(0, t.size() - 1));

    const auto first = t.find('|');
    const auto last = t.rfind('|');
    if (first == std::string::npos || first == last) {
        return reject(RejectionStage::ParseFail, "expected <question> | <answer> | <citation>, got: " + t);
    }
    ParsedQa qa;
    qa.question = trim(std::string_view(t).substr(0, first));
    qa.answer = trim(std::string_view(t).substr(first + 1, last - first - 1));
    if (qa.question.empty() || qa.answer.empty()) {
        return reject(RejectionStage::ParseFail, "empty question or answer field");
    }
    try {
        qa.citations = parse_citations(std::string_view(t).substr(last + 1), n_candidates);
    } catch (const ParseError& e) {
        return reject(RejectionStage::ParseFail, e.what());
    }
    return qa;
}

SourceBlock enumerate_sources(const std::vector<Source>& sources, const std::vector<std::string>& labels) {
    if (labels.size() != sources.size()) {
        throw ValidationError("enumerate_sources: one label per source required");
    }
    SourceBlock block;
    std::vector<std::string> lines;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        const auto& s = sources[i];
        if (s.modality == Modality::Image) {
            block.has_images = true;
            block.media.push_back({Role::User, "Image " + labels[i] + ": " + s.caption.value_or(""), {*s.image_ref}});
            continue;
        }
        lines.push_back("Passage " + labels[i] + ": " + (s.modality == Modality::Text ? search_text(s) : s.text));
    }
    block.passages = lines.empty() ? "(no passages)" : join(lines, "\n");
    return block;
}

Outcome<ParsedQa> generate_over(Provider& provider, const PromptAssets& assets, const std::vector<Source>& sources,
                                const std::string& style_prompt, const std::vector<FewShot>& shots,
                                const ModalityRequirement& requirement, const std::string& tag, Trace& trace) {
    auto block = enumerate_sources(sources, numbered_labels(sources.size()));
    const auto& instruction_t =
        assets.catalog.get(block.has_images ? "generate_image_instruction" : "generate_text_instruction");
    const auto instruction =
        instruction_t.render({{"style_prompt", style_prompt}, {"modality_requirements", requirement.describe()}});
    CompletionRequest req;
    req.tag = tag;
    req.temperature = kGreedyTemperature;
    req.turns = assemble_turns(instruction, assets.catalog.get("generate_query"), shots,
                               {{"enumerated_passages", block.passages}}, std::move(block.media), assets.mode);
    auto reply = provider.complete(req);
    trace.refs.push_back(reply.request_hash);
    return parse_generation(reply.text, sources.size());
}

Outcome<std::string> extract_entity(Provider& provider, const PromptAssets& assets, const Source& seed,
                                    Trace& trace) {
    std::string passage;
    if (seed.modality == Modality::Image) {
        if (!seed.verbalisation || seed.verbalisation->empty()) {
            throw ValidationError("image seed " + seed.id + " has no verbalisation");
        }
        passage = image_search_text(seed);
    } else {
        passage = search_text(seed);
    }
    CompletionRequest req;
    req.tag = "extract_entity";
    req.temperature = kEntityTemperature;
    req.turns = assemble_turns(assets.catalog.get("entity_instruction").render({{"num_entities", "1"}}),
                               assets.catalog.get("entity_query"), assets.entity_few_shots, {{"passage", passage}},
                               {}, assets.mode);
    auto reply = provider.complete(req);
    trace.refs.push_back(reply.request_hash);
    if (is_refusal(reply.text)) {
        return reject(RejectionStage::ParseFail, "entity extraction declined");
    }
    for (const auto& line : split_lines(reply.text)) {
        auto entity = strip_entity_line(line);
        if (!entity.empty()) {
            if (is_refusal(entity)) {
                return reject(RejectionStage::ParseFail, "entity extraction declined");
            }
            return entity;
        }
    }
    return reject(RejectionStage::ParseFail, "empty entity extraction response");
}

CandidateSet retrieve_candidates(const DenseIndex& index, Provider& provider, const Corpus& corpus,
                                 const std::string& entity, const ModalityRequirement& requirement,
                                 std::size_t k_modality, const std::string& seed_id) {
    if (k_modality < 1) {
        throw ValidationError("k_modality must be at least 1");
    }
    requirement.validate();
    CandidateSet cand;
    cand.entity = entity;
    cand.seed_id = seed_id;
    cand.requirement = requirement;
    const auto query = provider.embed({entity}).at(0);
    for (auto m : kAllModalities) {
        const auto need = requirement.count(m);
        if (need == 0) {
            continue;
        }
        if (corpus.count(m) == 0) {
            throw ValidationError("requirement needs " + std::string(wire_name(m)) +
                                  " sources but the corpus has none");
        }
        const auto hits = index.knn(query, static_cast<std::size_t>(need) * k_modality, m);
        for (std::size_t r = 0; r < hits.size(); ++r) {
            cand.candidates.push_back({corpus.at(hits[r].id), r + 1});
        }
    }
    return cand;
}

Outcome<QaSample> generate_qa(Provider& provider, const PromptAssets& assets, const CandidateSet& cand,
                              const QuestionStyle& style, Trace& trace) {
    const auto sources = cand.sources();
    auto parsed = generate_over(provider, assets, sources, style.description, style.few_shots, cand.requirement,
                                "generate", trace);
    if (auto* r = std::get_if<Rejection>(&parsed)) {
        return *r;
    }
    auto& qa = std::get<ParsedQa>(parsed);
    QaSample s;
    s.question = std::move(qa.question);
    s.answer = std::move(qa.answer);
    std::vector<bool> chosen(sources.size(), false);
    for (auto k : qa.citations) {
        chosen[k - 1] = true;
        s.source_ids.push_back(sources[k - 1].id);
    }
    for (std::size_t i = 0; i < sources.size(); ++i) {
        if (!chosen[i]) {
            s.distractor_ids.push_back(sources[i].id);
        }
    }
    s.style = style.name;
    s.requirement = cand.requirement;
    s.entity = cand.entity;
    s.seed_id = cand.seed_id;
    return s;
}

std::optional<Rejection> verify_modalities(const QaSample& draft, const Corpus& corpus,
                                           const ModalityRequirement& requirement) {
    const auto got = tally(draft.source_ids, corpus);
    if (got == requirement) {
        return std::nullopt;
    }
    auto full = [](const ModalityRequirement& m) {
        return std::to_string(m.text) + " text, " + std::to_string(m.table) + " table, " + std::to_string(m.image) +
               " image";
    };
    return reject(RejectionStage::ModalityMismatch, "sources are " + full(got) + "; required " + full(requirement));
}

std::optional<Rejection> interpret_verification(std::string_view response) {
    const auto t = trim(response);
    if (starts_with_ci(t, "pass")) {
        return std::nullopt;
    }
    if (!starts_with_ci(t, "fail")) {
        return reject(RejectionStage::ParseFail, "unrecognised verification response: " + t);
    }
    bool c1 = false;
    bool c2 = false;
    for (std::size_t i = 4; i < t.size(); ++i) {
        if (!std::isdigit(static_cast<unsigned char>(t[i]))) {
            continue;
        }
        const bool alone_before = !std::isdigit(static_cast<unsigned char>(t[i - 1]));
        const bool alone_after = i + 1 == t.size() || !std::isdigit(static_cast<unsigned char>(t[i + 1]));
        if (alone_before && alone_after) {
            c1 = c1 || t[i] == '1';
            c2 = c2 || t[i] == '2';
        }
    }
    if (c2 && !c1) {
        return reject(RejectionStage::StyleCheckFail, t);
    }
    return reject(RejectionStage::CorrectnessFail, t);
}

std::optional<Rejection> verify_qa(Provider& provider, const PromptAssets& assets, const QaSample& draft,
                                   const QuestionStyle& style, const std::vector<Source>& sources, Trace& trace) {
    auto block = enumerate_sources(sources, numbered_labels(sources.size()));
    const auto instruction =
        assets.catalog.get(block.has_images ? "verify_image_instruction" : "verify_text_instruction").render({});
    CompletionRequest req;
    req.tag = "verify";
    req.temperature = kGreedyTemperature;
    req.turns = assemble_turns(instruction, assets.catalog.get("verify_query"), {},
                               {{"question", draft.question},
                                {"answer", draft.answer},
                                {"style_prompt", style.description},
                                {"enumerated_passages", block.passages}},
                               std::move(block.media), assets.mode);
    auto reply = provider.complete(req);
    trace.refs.push_back(reply.request_hash);
    return interpret_verification(reply.text);
}

Rng attempt_rng(std::uint64_t run_seed, std::size_t attempt) {
    const auto a = static_cast<std::uint64_t>(attempt);
    std::seed_seq seq{static_cast<std::uint32_t>(run_seed), static_cast<std::uint32_t>(run_seed >> 32),
                      static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32)};
    return Rng(seq);
}

namespace {

const QuestionStyle& find_style(const std::vector<QuestionStyle>& styles, const std::string& name) {
    for (const auto& s : styles) {
        if (s.name == name) {
            return s;
        }
    }
    throw ValidationError("plan names unknown style " + name);
}

}  // namespace

void validate_plan(const PipelineConfig& config, const Corpus& corpus, const std::vector<QuestionStyle>& styles) {
    if (config.plan.empty()) {
        throw ValidationError("plan is empty");
    }
    if (config.k_modality < 1) {
        throw ValidationError("k_modality must be at least 1");
    }
    if (config.max_attempts_factor < 1) {
        throw ValidationError("max_attempts_factor must be at least 1");
    }
    for (const auto& item : config.plan) {
        const auto& style = find_style(styles, item.style);
        item.requirement.validate();
        if (item.count == 0) {
            throw ValidationError("plan entry for " + item.style + " has count 0");
        }
        if (!style.allows(item.requirement)) {
            throw ValidationError("style " + item.style + " does not allow requirement " + item.requirement.describe());
        }
        for (auto m : kAllModalities) {
            if (item.requirement.count(m) > 0 && corpus.count(m) == 0) {
                throw ValidationError("plan entry for " + item.style + " needs " + std::string(wire_name(m)) +
                                      " sources but the corpus has none");
            }
        }
        if (style.multihop && item.requirement.total() != 2) {
            throw ValidationError("multi-hop style " + item.style + " needs exactly two sources");
        }
    }
}

PipelineResult run_pipeline(const PipelineConfig& config, const Corpus& corpus, const DenseIndex& index,
                            const SeedWeights& weights, Provider& provider, const PromptAssets& assets,
                            const std::vector<QuestionStyle>& styles) {
    validate_plan(config, corpus, styles);
    PipelineResult result;
    std::vector<std::size_t> remaining;
    for (const auto& item : config.plan) {
        remaining.push_back(item.count);
        result.target += item.count;
    }
    const auto budget = config.max_attempts_factor * result.target;

    auto run_attempt = [&](std::size_t item_idx, std::size_t attempt) -> Outcome<QaSample> {
        const auto& item = config.plan[item_idx];
        const auto& style = find_style(styles, item.style);
        auto rng = attempt_rng(config.rng_seed, attempt);
        Trace trace;
        const auto seed_id = sample_seed(weights, rng);
        std::string entity;
        auto fail = [&](Rejection r) {
            r.seed_id = seed_id;
            r.entity = entity;
            r.style = item.style;
            r.requirement = item.requirement;
            r.attempt = attempt;
            return r;
        };
        auto ent = extract_entity(provider, assets, corpus.at(seed_id), trace);
        if (auto* r = std::get_if<Rejection>(&ent)) {
            return fail(*r);
        }
        entity = std::get<std::string>(ent);
        const auto cand =
            retrieve_candidates(index, provider, corpus, entity, item.requirement, config.k_modality, seed_id);
        auto draft = style.multihop ? run_multihop(provider, assets, cand, style, rng, trace)
                                    : generate_qa(provider, assets, cand, style, trace);
        if (auto* r = std::get_if<Rejection>(&draft)) {
            return fail(*r);
        }
        auto sample = std::get<QaSample>(std::move(draft));
        if (auto r = verify_modalities(sample, corpus, item.requirement)) {
            return fail(*r);
        }
        std::vector<Source> sources;
        for (const auto& id : sample.source_ids) {
            sources.push_back(corpus.at(id));
        }
        if (auto r = verify_qa(provider, assets, sample, style, sources, trace)) {
            return fail(*r);
        }
        sample.transcript_refs = std::move(trace.refs);
        return sample;
    };

    std::size_t attempt = 0;
    while (attempt < budget) {
        std::vector<std::size_t> wave;
        const auto rounds = *std::max_element(remaining.begin(), remaining.end());
        if (rounds == 0) {
            break;
        }
        for (std::size_t round = 0; round < rounds; ++round) {
            for (std::size_t i = 0; i < remaining.size(); ++i) {
                if (round < remaining[i]) {
                    wave.push_back(i);
                }
            }
        }
        wave.resize(std::min(wave.size(), budget - attempt));

        std::vector<std::optional<Outcome<QaSample>>> outcomes(wave.size());
        parallel_for(wave.size(), config.jobs,
                     [&](std::size_t j) { outcomes[j] = run_attempt(wave[j], attempt + j); });

        for (std::size_t j = 0; j < wave.size(); ++j) {
            auto& o = *outcomes[j];
            if (auto* s = std::get_if<QaSample>(&o)) {
                --remaining[wave[j]];
                s->id = padded_id(result.samples.size() + 1);
                result.samples.push_back(std::move(*s));
            } else {
                result.rejections.push_back(std::move(std::get<Rejection>(o)));
            }
        }
        attempt += wave.size();
    }
    result.attempts = attempt;
    return result;
}

std::string sample_to_json_line(const QaSample& s) {
    ojson j;
    j["id"] = s.id;
    j["question"] = s.question;
    j["answer"] = s.answer;
    j["style"] = s.style;
    j["requirement"] = s.requirement.as_array();
    j["source_ids"] = s.source_ids;
    j["distractor_ids"] = s.distractor_ids;
    j["entity"] = s.entity;
    j["seed_id"] = s.seed_id;
    j["transcript_refs"] = s.transcript_refs;
    if (s.multihop) {
        j["intermediate_questions"] = s.multihop->questions;
        j["intermediate_answers"] = s.multihop->answers;
        j["intermediate_source_ids"] = s.multihop->source_ids;
    }
    return j.dump();
}

std::string rejection_to_json_line(const Rejection& r) {
    ojson j;
    j["attempt"] = r.attempt;
    j["stage"] = to_string(r.stage);
    j["detail"] = r.detail;
    j["style"] = r.style;
    j["requirement"] = r.requirement.as_array();
    j["seed_id"] = r.seed_id;
    j["entity"] = r.entity;
    return j.dump();
}

QaSample sample_from_json_line(std::string_view line) {
    ojson j;
    try {
        j = ojson::parse(line);
    } catch (const ojson::parse_error& e) {
        throw ValidationError(std::string("invalid dataset JSON: ") + e.what());
    }
    auto need = [&](const char* field) -> const ojson& {
        if (!j.contains(field)) {
            throw ValidationError(std::string("dataset record missing field ") + field);
        }
        return j[field];
    };
    QaSample s;
    try {
        s.id = j.value("id", std::string());
        s.question = need("question").get<std::string>();
        s.answer = need("answer").get<std::string>();
        s.style = need("style").get<std::string>();
        s.requirement = parse_requirement(need("requirement"), "dataset record");
        s.source_ids = need("source_ids").get<std::vector<std::string>>();
        s.distractor_ids = j.value("distractor_ids", std::vector<std::string>{});
        s.entity = j.value("entity", std::string());
        s.seed_id = j.value("seed_id", std::string());
        s.transcript_refs = j.value("transcript_refs", std::vector<std::string>{});
        if (j.contains("intermediate_questions")) {
            MultihopTrace t;
            t.questions = j["intermediate_questions"].get<std::array<std::string, 2>>();
            t.answers = need("intermediate_answers").get<std::array<std::string, 2>>();
            if (j.contains("intermediate_source_ids")) {
                t.source_ids = j["intermediate_source_ids"].get<std::array<std::vector<std::string>, 2>>();
            }
            s.multihop = std::move(t);
        }
    } catch (const ojson::type_error& e) {
        throw ValidationError(std::string("dataset record has a field of the wrong type: ") + e.what());
    }
    return s;
}

std::vector<QaSample> load_dataset(const std::filesystem::path& path) {
    std::vector<QaSample> out;
    std::size_t line_no = 0;
    for (const auto& line : split_lines(read_file(path.string()))) {
        ++line_no;
        if (trim(line).empty()) {
            continue;
        }
        try {
            out.push_back(sample_from_json_line(line));
        } catch (const ValidationError& e) {
            throw ValidationError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
        if (out.back().id.empty()) {
            out.back().id = padded_id(out.size());
        }
    }
    return out;
}

}  // namespace smmqg
