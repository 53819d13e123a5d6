#include "smmqg/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <unordered_map>

#include <json.hpp>

#include "smmqg/error.hpp"
#include "smmqg/parallel.hpp"
#include "smmqg/text.hpp"

namespace smmqg {

using ojson = nlohmann::ordered_json;

double recall_at_k(const RetrievalTrial& trial, std::size_t k) {
    if (k < 1) {
        throw ValidationError("recall@k needs k >= 1");
    }
    if (trial.gold_ids.empty()) {
        throw ValidationError("question " + trial.question_id + " has no gold sources");
    }
    std::set<std::string> seen;
    std::size_t hits = 0;
    const auto limit = std::min(k, trial.retrieved.size());
    for (std::size_t i = 0; i < limit; ++i) {
        if (!seen.insert(trial.retrieved[i]).second) {
            throw ValidationError("question " + trial.question_id + " retrieved " + trial.retrieved[i] + " twice");
        }
        hits += trial.gold_ids.contains(trial.retrieved[i]) ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(trial.gold_ids.size());
}

std::string_view to_string(JudgeTemplate t) { return t == JudgeTemplate::Sources ? "sources" : "reference"; }

JudgeTemplate parse_judge_template(std::string_view s) {
    const auto v = to_lower(s);
    if (v == "sources") return JudgeTemplate::Sources;
    if (v == "reference") return JudgeTemplate::Reference;
    throw ValidationError("unknown judge template: " + std::string(s) + " (expected sources|reference)");
}

namespace {

/// Reads a score at the start of s (after spaces and markdown emphasis).
std::optional<std::pair<int, std::size_t>> leading_int(std::string_view s) {
    std::size_t i = 0;
    while (i < s.size() && (std::isspace(static_cast<unsigned char>(s[i])) || s[i] == '*')) {
        ++i;
    }
    const auto start = i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) {
        ++i;
    }
    if (i == start || i - start > 6) {
        return std::nullopt;
    }
    return std::pair{std::stoi(std::string(s.substr(start, i - start))), i};
}

int checked_score(int v) {
    if (v < 0 || v > 2) {
        throw ParseError("judge score " + std::to_string(v) + " outside 0..2");
    }
    return v;
}

}  // namespace

ParsedScore parse_judge_response(std::string_view response, bool prompt_ends_with_score) {
    const auto lower = to_lower(response);
    const auto pos = lower.rfind("score:");
    if (pos != std::string::npos) {
        auto value = leading_int(std::string_view(response).substr(pos + 6));
        if (!value) {
            throw ParseError("no integer after the final Score: token");
        }
        return {checked_score(value->first), trim(response.substr(0, pos))};
    }
    if (prompt_ends_with_score) {
        if (auto value = leading_int(response)) {
            return {checked_score(value->first), trim(response.substr(value->second))};
        }
    }
    throw ParseError("judge response has no Score: token");
}

JudgeVerdict judge_answer(Provider& provider, const PromptAssets& assets, JudgeTemplate tmpl,
                          const std::string& question_id, const std::string& question,
                          const std::string& candidate_answer, const std::string& model_answer,
                          const std::vector<Source>& sources) {
    CompletionRequest req;
    req.tag = "judge";
    req.temperature = kGreedyTemperature;
    bool ends_with_score = false;
    if (tmpl == JudgeTemplate::Reference) {
        const auto prompt = assets.catalog.get("judge_reference")
                                .render({{"question", question},
                                         {"reference", model_answer},
                                         {"prediction", candidate_answer}});
        ends_with_score = to_lower(trim(prompt)).ends_with("score:");
        req.turns.push_back({Role::User, prompt, {}});
    } else {
        std::vector<std::string> labels;
        for (std::size_t i = 1; i <= sources.size(); ++i) {
            labels.push_back(std::to_string(i));
        }
        auto block = enumerate_sources(sources, labels);
        const auto instruction =
            assets.catalog.get(block.has_images ? "judge_image_instruction" : "judge_text_instruction").render({});
        const Vars vars{{"question", question},
                        {"candidate_answer", candidate_answer},
                        {"model_answer", model_answer},
                        {"passages", block.passages}};
        const auto& query = assets.catalog.get("judge_query");
        ends_with_score = to_lower(trim(query.render(vars))).ends_with("score:");
        req.turns = assemble_turns(instruction, query, {}, vars, std::move(block.media), assets.mode);
    }
    auto reply = provider.complete(req);
    auto parsed = parse_judge_response(reply.text, ends_with_score);
    return {question_id, parsed.score, std::move(parsed.explanation), tmpl};
}

double aggregate_judge(const std::vector<JudgeVerdict>& verdicts) {
    if (verdicts.empty()) {
        throw ValidationError("aggregate_judge needs at least one verdict");
    }
    long total = 0;
    for (const auto& v : verdicts) {
        total += checked_score(v.score);
    }
    return 100.0 * static_cast<double>(total) / (2.0 * static_cast<double>(verdicts.size()));
}

double rouge1(std::string_view reference, std::string_view candidate) {
    const auto ref = tokenize(reference);
    const auto cand = tokenize(candidate);
    if (ref.empty() && cand.empty()) {
        return 1.0;
    }
    if (ref.empty() || cand.empty()) {
        return 0.0;
    }
    std::unordered_map<std::string, long> counts;
    for (const auto& t : ref) {
        ++counts[t];
    }
    long overlap = 0;
    for (const auto& t : cand) {
        auto it = counts.find(t);
        if (it != counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) {
        return 0.0;
    }
    const double p = static_cast<double>(overlap) / static_cast<double>(cand.size());
    const double r = static_cast<double>(overlap) / static_cast<double>(ref.size());
    return 2 * p * r / (p + r);
}

std::string_view to_string(GroupBy g) { return g == GroupBy::Style ? "style" : "modality"; }

GroupBy parse_group_by(std::string_view s) {
    const auto v = to_lower(s);
    if (v == "style") return GroupBy::Style;
    if (v == "modality") return GroupBy::Modality;
    throw ValidationError("unknown group key: " + std::string(s) + " (expected style|modality)");
}

std::string group_key(const QaSample& s, GroupBy g) {
    return g == GroupBy::Style ? s.style : s.requirement.label();
}

std::string Report::to_json() const {
    ojson j;
    j["mode"] = mode;
    j["group_by"] = to_string(group_by);
    j["groups"] = groups;
    j["group_sizes"] = ojson::object();
    for (const auto& g : groups) {
        auto it = group_sizes.find(g);
        j["group_sizes"][g] = it == group_sizes.end() ? 0 : it->second;
    }
    j["systems"] = systems;
    j["values"] = ojson::object();
    for (const auto& sys : systems) {
        ojson row = ojson::object();
        const auto it = values.find(sys);
        if (it != values.end()) {
            for (const auto& g : groups) {
                if (auto v = it->second.find(g); v != it->second.end()) row[g] = v->second;
            }
            if (auto v = it->second.find(std::string(kAllGroup)); v != it->second.end()) {
                row[std::string(kAllGroup)] = v->second;
            }
        }
        j["values"][sys] = row;
    }
    return j.dump(2) + "\n";
}

Report Report::from_json(std::string_view text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const ojson::parse_error& e) {
        throw ValidationError(std::string("report is not valid JSON: ") + e.what());
    }
    Report r;
    try {
        r.mode = j.value("mode", std::string());
        r.group_by = parse_group_by(j.value("group_by", std::string("style")));
        r.groups = j.value("groups", std::vector<std::string>{});
        if (j.contains("group_sizes")) {
            r.group_sizes = j["group_sizes"].get<std::map<std::string, std::size_t>>();
        }
        if (!j.contains("values") || !j["values"].is_object()) {
            throw ValidationError("report has no values object");
        }
        for (const auto& [sys, row] : j["values"].items()) {
            r.values[sys] = row.get<std::map<std::string, double>>();
        }
        if (j.contains("systems")) {
            r.systems = j["systems"].get<std::vector<std::string>>();
        } else {
            for (const auto& [sys, _] : j["values"].items()) r.systems.push_back(sys);
        }
    } catch (const ojson::exception& e) {
        throw ValidationError(std::string("malformed report: ") + e.what());
    }
    for (const auto& sys : r.systems) {
        if (!r.values.contains(sys)) {
            throw ValidationError("report lists system " + sys + " without values");
        }
    }
    return r;
}

std::string Report::render() const {
    std::vector<std::string> cols = groups;
    cols.emplace_back(kAllGroup);
    std::size_t label_w = 6;
    for (const auto& s : systems) label_w = std::max(label_w, s.size());
    std::vector<std::size_t> widths;
    for (const auto& c : cols) widths.push_back(std::max<std::size_t>(c.size(), 5));

    auto pad_right = [](std::string s, std::size_t w) { return s + std::string(w > s.size() ? w - s.size() : 0, ' '); };
    auto pad_left = [](std::string s, std::size_t w) { return std::string(w > s.size() ? w - s.size() : 0, ' ') + s; };

    std::string out = pad_right("System", label_w);
    for (std::size_t i = 0; i < cols.size(); ++i) {
        out += " | " + pad_left(cols[i] == kAllGroup ? "All" : cols[i], widths[i]);
    }
    out += '\n';
    out += std::string(out.size() - 1, '-') + '\n';
    for (const auto& sys : systems) {
        out += pad_right(sys, label_w);
        const auto& row = values.at(sys);
        for (std::size_t i = 0; i < cols.size(); ++i) {
            std::string cell = "-";
            if (auto it = row.find(cols[i]); it != row.end()) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "%.1f", it->second);
                cell = buf;
            }
            out += " | " + pad_left(cell, widths[i]);
        }
        out += '\n';
    }
    return out;
}

RankedList Report::ranked(std::string_view group) const {
    RankedList list;
    for (const auto& sys : systems) {
        const auto& row = values.at(sys);
        auto it = row.find(std::string(group));
        if (it == row.end()) {
            throw ValidationError("system " + sys + " has no value for group " + std::string(group));
        }
        list.items.emplace_back(sys, it->second);
    }
    return list;
}

Report load_report(const std::filesystem::path& path) { return Report::from_json(read_file(path.string())); }

namespace {

/// Fills groups, sizes and per-system means from per-question scores.
void fill_report(Report& report, const std::vector<QaSample>& dataset, const std::string& system,
                 const std::vector<double>& per_question) {
    std::map<std::string, std::pair<double, std::size_t>> acc;
    double total = 0.0;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        const auto key = group_key(dataset[i], report.group_by);
        auto& [sum, n] = acc[key];
        sum += per_question[i];
        ++n;
        total += per_question[i];
    }
    auto& row = report.values[system];
    for (const auto& [key, sn] : acc) {
        row[key] = sn.first / static_cast<double>(sn.second);
    }
    row[std::string(kAllGroup)] = dataset.empty() ? 0.0 : total / static_cast<double>(dataset.size());
    report.systems.push_back(system);
}

void init_groups(Report& report, const std::vector<QaSample>& dataset) {
    for (const auto& s : dataset) {
        const auto key = group_key(s, report.group_by);
        if (report.group_sizes[key]++ == 0) {
            report.groups.push_back(key);
        }
    }
}

}  // namespace

Report run_retrieval_eval(const std::vector<QaSample>& dataset, const std::vector<RetrievalSystem>& systems,
                          const std::vector<std::size_t>& ks, GroupBy group_by) {
    if (ks.empty()) {
        throw ValidationError("retrieval eval needs at least one k");
    }
    const auto k_max = *std::max_element(ks.begin(), ks.end());
    Report report;
    report.mode = "retrieval";
    report.group_by = group_by;
    init_groups(report, dataset);
    for (const auto& sys : systems) {
        std::vector<std::vector<double>> per_k(ks.size(), std::vector<double>(dataset.size()));
        for (std::size_t i = 0; i < dataset.size(); ++i) {
            const auto& s = dataset[i];
            RetrievalTrial trial{s.id, {s.source_ids.begin(), s.source_ids.end()}, {}};
            std::set<std::string> seen;
            for (auto& id : sys.search(s, k_max)) {
                if (seen.insert(id).second) trial.retrieved.push_back(std::move(id));
            }
            for (std::size_t j = 0; j < ks.size(); ++j) {
                per_k[j][i] = 100.0 * recall_at_k(trial, ks[j]);
            }
        }
        for (std::size_t j = 0; j < ks.size(); ++j) {
            fill_report(report, dataset, sys.label + "@" + std::to_string(ks[j]), per_k[j]);
        }
    }
    return report;
}

std::map<std::string, std::vector<std::string>> load_run_file(const std::filesystem::path& path) {
    std::map<std::string, std::vector<std::string>> out;
    std::size_t line_no = 0;
    for (const auto& line : split_lines(read_file(path.string()))) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            auto j = ojson::parse(line);
            out[j.at("question_id").get<std::string>()] = j.at("retrieved").get<std::vector<std::string>>();
        } catch (const ojson::exception& e) {
            throw ValidationError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

QaEvalResult run_qa_eval(const std::vector<QaSample>& dataset,
                         const std::map<std::string, std::map<std::string, std::string>>& predictions,
                         const Corpus& corpus, Provider& judge, const PromptAssets& assets, JudgeTemplate tmpl,
                         GroupBy group_by, unsigned jobs) {
    for (const auto& [system, preds] : predictions) {
        std::vector<std::string> missing;
        for (const auto& s : dataset) {
            if (!preds.contains(s.id)) missing.push_back(s.id);
        }
        if (!missing.empty()) {
            throw ValidationError("system " + system + " has no prediction for: " + join(missing, ", "));
        }
    }
    QaEvalResult result;
    result.judge.mode = "qa";
    result.rouge.mode = "rouge1";
    result.judge.group_by = result.rouge.group_by = group_by;
    init_groups(result.judge, dataset);
    init_groups(result.rouge, dataset);

    std::vector<std::string> systems;
    for (const auto& [system, _] : predictions) systems.push_back(system);
    const auto n = dataset.size();
    std::vector<JudgeVerdict> flat(systems.size() * n);
    parallel_for(flat.size(), jobs, [&](std::size_t idx) {
        const auto& s = dataset[idx % n];
        const auto& answer = predictions.at(systems[idx / n]).at(s.id);
        std::vector<Source> sources;
        for (const auto& id : s.source_ids) sources.push_back(corpus.at(id));
        flat[idx] = judge_answer(judge, assets, tmpl, s.id, s.question, answer, s.answer, sources);
    });

    for (std::size_t k = 0; k < systems.size(); ++k) {
        const auto& preds = predictions.at(systems[k]);
        std::vector<JudgeVerdict> verdicts(flat.begin() + static_cast<std::ptrdiff_t>(k * n),
                                           flat.begin() + static_cast<std::ptrdiff_t>((k + 1) * n));
        std::vector<double> judge_scores(n);
        std::vector<double> rouge_scores(n);
        for (std::size_t i = 0; i < n; ++i) {
            judge_scores[i] = 50.0 * verdicts[i].score;
            rouge_scores[i] = 100.0 * rouge1(dataset[i].answer, preds.at(dataset[i].id));
        }
        fill_report(result.judge, dataset, systems[k], judge_scores);
        fill_report(result.rouge, dataset, systems[k], rouge_scores);
        result.verdicts[systems[k]] = std::move(verdicts);
    }
    return result;
}

std::map<std::string, std::string> load_predictions(const std::filesystem::path& path) {
    std::map<std::string, std::string> out;
    std::size_t line_no = 0;
    for (const auto& line : split_lines(read_file(path.string()))) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            auto j = ojson::parse(line);
            out[j.at("question_id").get<std::string>()] = j.at("answer").get<std::string>();
        } catch (const ojson::exception& e) {
            throw ValidationError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

std::string verdict_to_json_line(const std::string& system, const JudgeVerdict& v) {
    ojson j;
    j["system"] = system;
    j["question_id"] = v.question_id;
    j["score"] = v.score;
    j["explanation"] = v.explanation;
    j["judge_template"] = to_string(v.judge_template);
    return j.dump();
}

}  // namespace smmqg
