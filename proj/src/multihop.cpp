#include "smmqg/multihop.hpp"

#include <algorithm>

#include "smmqg/error.hpp"
#include "smmqg/text.hpp"

namespace smmqg {

namespace {

Rejection reject(RejectionStage stage, std::string detail) {
    Rejection r;
    r.stage = stage;
    r.detail = std::move(detail);
    return r;
}

ModalityRequirement only(Modality m, int n) {
    ModalityRequirement r;
    r.count(m) = n;
    return r;
}

}  // namespace

std::pair<CandidatePool, CandidatePool> split_candidates(const CandidateSet& cand, Rng& rng) {
    if (cand.candidates.size() < 2) {
        throw ValidationError("multi-hop generation needs at least 2 candidates, got " +
                              std::to_string(cand.candidates.size()));
    }
    std::vector<Modality> present;
    for (auto m : kAllModalities) {
        if (cand.requirement.count(m) > 0) {
            present.push_back(m);
        }
    }
    CandidatePool p1;
    CandidatePool p2;
    if (present.size() >= 2) {
        const auto m1 = present[0];
        p1.requirement = only(m1, cand.requirement.count(m1));
        p2.requirement = cand.requirement;
        p2.requirement.count(m1) = 0;
        for (const auto& c : cand.candidates) {
            (c.source.modality == m1 ? p1 : p2).sources.push_back(c.source);
        }
        if (p1.sources.empty() || p2.sources.empty()) {
            throw ValidationError("modality split left a pool empty");
        }
        return {std::move(p1), std::move(p2)};
    }

    const auto m = present.at(0);
    const int n = cand.requirement.count(m);
    p1.requirement = only(m, std::max(1, n / 2));
    p2.requirement = only(m, std::max(1, n - n / 2));
    std::vector<bool> side(cand.candidates.size());
    while (true) {
        std::size_t ones = 0;
        for (std::size_t i = 0; i < side.size(); ++i) {
            side[i] = uniform01(rng) < 0.5;
            ones += side[i] ? 1 : 0;
        }
        if (ones != 0 && ones != side.size()) {
            break;
        }
    }
    for (std::size_t i = 0; i < side.size(); ++i) {
        (side[i] ? p2 : p1).sources.push_back(cand.candidates[i].source);
    }
    return {std::move(p1), std::move(p2)};
}

namespace {

Outcome<IntermediateQa> one_intermediate(Provider& provider, const PromptAssets& assets, const QuestionStyle& style,
                                         const std::string& entity, const CandidatePool& pool, IntermediateKind kind,
                                         Trace& trace) {
    const bool about = kind == IntermediateKind::AboutEntity;
    const auto style_prompt =
        assets.catalog.get(about ? "style_about_entity" : "style_entity_as_answer").render({{"entity", entity}});
    auto parsed = generate_over(provider, assets, pool.sources, style_prompt, style.intermediate_few_shots,
                                pool.requirement, about ? "intermediate_about" : "intermediate_answer", trace);
    if (auto* r = std::get_if<Rejection>(&parsed)) {
        return *r;
    }
    auto& qa = std::get<ParsedQa>(parsed);
    IntermediateQa out;
    out.kind = kind;
    out.question = std::move(qa.question);
    out.answer = std::move(qa.answer);
    for (auto k : qa.citations) {
        out.source_ids.push_back(pool.sources[k - 1].id);
    }
    if (!about && normalize_entity(out.answer) != normalize_entity(entity)) {
        return reject(RejectionStage::CorrectnessFail,
                      "entity-as-answer intermediate answered \"" + out.answer + "\", expected \"" + entity + "\"");
    }
    return out;
}

}  // namespace

Outcome<std::pair<IntermediateQa, IntermediateQa>> gen_intermediates(Provider& provider, const PromptAssets& assets,
                                                                     const QuestionStyle& style,
                                                                     const std::string& entity,
                                                                     const CandidatePool& pool_1,
                                                                     const CandidatePool& pool_2, Trace& trace) {
    if (pool_1.sources.empty() || pool_2.sources.empty()) {
        throw ValidationError("intermediate generation needs two nonempty pools");
    }
    auto first = one_intermediate(provider, assets, style, entity, pool_1, IntermediateKind::AboutEntity, trace);
    if (auto* r = std::get_if<Rejection>(&first)) {
        return *r;
    }
    auto second = one_intermediate(provider, assets, style, entity, pool_2, IntermediateKind::EntityAsAnswer, trace);
    if (auto* r = std::get_if<Rejection>(&second)) {
        return *r;
    }
    return std::pair{std::get<IntermediateQa>(std::move(first)), std::get<IntermediateQa>(std::move(second))};
}

Outcome<std::pair<std::string, std::string>> parse_combination(std::string_view response) {
    auto t = trim(response);
    if (t.empty()) {
        return reject(RejectionStage::ParseFail, "empty combination response");
    }
    if (is_refusal(t)) {
        return reject(RejectionStage::Refusal, "combination declined");
    }
    if (starts_with_ci(t, "multi-hop question | answer")) {
        auto nl = t.find('\n');
        t = nl == std::string::npos ? std::string() : trim(t.substr(nl + 1));
    }
    if (!t.empty() && t.front() == '<') t = trim(t.substr(1));
    if (!t.empty() && t.back() == '>') t = trim(t.substr(0, t.size() - 1));
    const auto bar = t.find('|');
    if (bar == std::string::npos) {
        return reject(RejectionStage::ParseFail, "expected <multi-hop question | answer>, got: " + t);
    }
    auto q = trim(std::string_view(t).substr(0, bar));
    auto a = trim(std::string_view(t).substr(bar + 1));
    if (q.empty() || a.empty()) {
        return reject(RejectionStage::ParseFail, "empty multi-hop question or answer");
    }
    return std::pair{std::move(q), std::move(a)};
}

Outcome<QaSample> combine(Provider& provider, const PromptAssets& assets, const QuestionStyle& style,
                          const IntermediateQa& q1, const IntermediateQa& q2, const std::string& entity,
                          const std::vector<Source>& sources_1, const std::vector<Source>& sources_2, Trace& trace) {
    std::vector<Source> all = sources_1;
    all.insert(all.end(), sources_2.begin(), sources_2.end());
    std::vector<std::string> labels(sources_1.size(), "1");
    labels.resize(all.size(), "2");
    auto block = enumerate_sources(all, labels);
    const auto instruction =
        assets.catalog.get(block.has_images ? "combine_image_instruction" : "combine_text_instruction").render({});
    CompletionRequest req;
    req.tag = "combine";
    req.temperature = kGreedyTemperature;
    req.turns = assemble_turns(instruction, assets.catalog.get("combine_query"), style.few_shots,
                               {{"enumerated_passages", block.passages},
                                {"question_1", q1.question},
                                {"question_2", q2.question},
                                {"answer_1", q1.answer},
                                {"answer_2", q2.answer},
                                {"entity", entity}},
                               std::move(block.media), assets.mode);
    auto reply = provider.complete(req);
    trace.refs.push_back(reply.request_hash);
    auto parsed = parse_combination(reply.text);
    if (auto* r = std::get_if<Rejection>(&parsed)) {
        return *r;
    }
    auto& [question, answer] = std::get<std::pair<std::string, std::string>>(parsed);
    QaSample s;
    s.question = std::move(question);
    s.answer = std::move(answer);
    s.entity = entity;
    s.style = style.name;
    for (const auto* ids : {&q1.source_ids, &q2.source_ids}) {
        for (const auto& id : *ids) {
            if (std::find(s.source_ids.begin(), s.source_ids.end(), id) == s.source_ids.end()) {
                s.source_ids.push_back(id);
            }
        }
    }
    s.multihop = MultihopTrace{{q1.question, q2.question}, {q1.answer, q2.answer}, {q1.source_ids, q2.source_ids}};
    return s;
}

Outcome<QaSample> run_multihop(Provider& provider, const PromptAssets& assets, const CandidateSet& cand,
                               const QuestionStyle& style, Rng& rng, Trace& trace) {
    auto [pool_1, pool_2] = split_candidates(cand, rng);
    auto inter = gen_intermediates(provider, assets, style, cand.entity, pool_1, pool_2, trace);
    if (auto* r = std::get_if<Rejection>(&inter)) {
        return *r;
    }
    const auto& [q1, q2] = std::get<std::pair<IntermediateQa, IntermediateQa>>(inter);

    auto pick = [](const CandidatePool& pool, const IntermediateQa& q) {
        std::vector<Source> out;
        for (const auto& id : q.source_ids) {
            out.push_back(*std::find_if(pool.sources.begin(), pool.sources.end(),
                                        [&](const Source& s) { return s.id == id; }));
        }
        return out;
    };
    auto draft = combine(provider, assets, style, q1, q2, cand.entity, pick(pool_1, q1), pick(pool_2, q2), trace);
    if (auto* r = std::get_if<Rejection>(&draft)) {
        return *r;
    }
    auto s = std::get<QaSample>(std::move(draft));
    for (const auto& id : cand.ids()) {
        if (std::find(s.source_ids.begin(), s.source_ids.end(), id) == s.source_ids.end()) {
            s.distractor_ids.push_back(id);
        }
    }
    s.requirement = cand.requirement;
    s.seed_id = cand.seed_id;
    return s;
}

}  // namespace smmqg
