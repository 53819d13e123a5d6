#include "smmqg/config.hpp"

#include <json.hpp>

#include "smmqg/error.hpp"
#include "smmqg/text.hpp"

#ifndef SMMQG_DATA_DIR
#define SMMQG_DATA_DIR "data"
#endif

namespace smmqg {

using json = nlohmann::json;

std::filesystem::path default_data_dir() { return SMMQG_DATA_DIR; }

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key) || j[key].is_null()) {
        return fallback;
    }
    try {
        return j[key].get<T>();
    } catch (const json::type_error&) {
        throw ValidationError(where + ": field " + key + " has the wrong type");
    }
}

}  // namespace

RunConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ValidationError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) {
        throw ValidationError("config must be a JSON object");
    }
    auto resolve = [&](const std::string& p) -> std::filesystem::path {
        if (p.empty()) return {};
        std::filesystem::path path(p);
        return path.is_absolute() ? path : base_dir / path;
    };
    auto path_or = [&](const json& obj, const char* key, const std::string& fallback, const std::string& where) {
        return resolve(get_or<std::string>(obj, key, fallback, where));
    };

    RunConfig c;
    c.base_dir = base_dir;
    c.corpus = path_or(j, "corpus", "", "config");
    c.output = path_or(j, "output", "dataset.jsonl", "config");
    c.rejections = path_or(j, "rejections", "rejections.jsonl", "config");
    c.transcript = path_or(j, "transcript", "transcript.jsonl", "config");
    if (j.contains("index")) {
        c.index = path_or(j, "index", "", "config");
    } else if (!c.corpus.empty()) {
        c.index = c.corpus;
        c.index += ".idx";
    }
    c.prompts_dir = j.contains("prompts_dir") ? path_or(j, "prompts_dir", "", "config") : default_data_dir() / "prompts";
    c.styles_dir = j.contains("styles_dir") ? path_or(j, "styles_dir", "", "config") : default_data_dir() / "styles";

    if (!j.contains("rng_seed") || !j["rng_seed"].is_number_integer()) {
        throw ValidationError("config needs an integer rng_seed");
    }
    c.pipeline.rng_seed = j["rng_seed"].get<std::uint64_t>();
    c.pipeline.k_modality = get_or<std::size_t>(j, "k_modality", 2, "config");
    c.pipeline.max_attempts_factor = get_or<std::size_t>(j, "max_attempts_factor", 5, "config");
    c.k_seed = get_or<std::size_t>(j, "k_seed", 5, "config");
    c.beta = get_or<double>(j, "beta", 0.1, "config");
    c.min_text_chars = get_or<std::size_t>(j, "min_text_chars", kDefaultMinTextChars, "config");
    c.few_shot_mode = parse_few_shot_mode(get_or<std::string>(j, "few_shot_mode", "turns", "config"));
    c.styles = get_or<std::vector<std::string>>(j, "styles", {}, "config");

    for (const auto& item : get_or<json>(j, "plan", json::array(), "config")) {
        PlanItem p;
        p.style = get_or<std::string>(item, "style", "", "plan entry");
        const auto req = get_or<std::vector<int>>(item, "requirement", {}, "plan entry");
        if (req.size() != 3) {
            throw ValidationError("plan entry for " + p.style + ": requirement must be [text, table, image]");
        }
        p.requirement = {req[0], req[1], req[2]};
        p.count = get_or<std::size_t>(item, "count", 0, "plan entry");
        c.pipeline.plan.push_back(std::move(p));
    }

    if (j.contains("provider")) {
        const auto& pj = j["provider"];
        auto& p = c.provider;
        const std::string w = "provider";
        p.backend = get_or<std::string>(pj, "backend", p.backend, w);
        p.endpoint = get_or<std::string>(pj, "endpoint", p.endpoint, w);
        p.api_key_env = get_or<std::string>(pj, "api_key_env", p.api_key_env, w);
        p.model_name = get_or<std::string>(pj, "model_name", p.model_name, w);
        p.embedding_model = get_or<std::string>(pj, "embedding_model", p.embedding_model, w);
        p.script = get_or<std::string>(pj, "script", p.script, w);
        p.replay_from = get_or<std::string>(pj, "replay_from", p.replay_from, w);
        p.no_match_response = get_or<std::string>(pj, "no_match_response", p.no_match_response, w);
        p.supports_images = get_or<bool>(pj, "supports_images", p.supports_images, w);
        if (pj.contains("embedding_dim")) {
            p.embedding_dim = get_or<std::size_t>(pj, "embedding_dim", 0, w);
        }
        p.max_concurrency = get_or<int>(pj, "max_concurrency", p.max_concurrency, w);
        p.max_attempts = get_or<int>(pj, "max_attempts", p.max_attempts, w);
        p.base_delay_ms = get_or<int>(pj, "base_delay_ms", p.base_delay_ms, w);
    }

    auto& e = c.eval;
    e.dataset = c.output;
    e.report_prefix = resolve("report");
    e.verdicts = resolve("verdicts.jsonl");
    e.transcript = resolve("eval_transcript.jsonl");
    if (j.contains("eval")) {
        const auto& ej = j["eval"];
        const std::string w = "eval";
        if (ej.contains("dataset")) e.dataset = path_or(ej, "dataset", "", w);
        if (ej.contains("report")) e.report_prefix = path_or(ej, "report", "", w);
        if (ej.contains("verdicts")) e.verdicts = path_or(ej, "verdicts", "", w);
        if (ej.contains("transcript")) e.transcript = path_or(ej, "transcript", "", w);
        e.group_by = parse_group_by(get_or<std::string>(ej, "group_by", "style", w));
        e.ks = get_or<std::vector<std::size_t>>(ej, "ks", e.ks, w);
        e.judge_template = parse_judge_template(get_or<std::string>(ej, "judge_template", "sources", w));
        for (const auto& r : get_or<json>(ej, "retrievers", json::array(), w)) {
            RetrieverSpec spec;
            spec.kind = to_lower(get_or<std::string>(r, "kind", "", "retriever"));
            spec.label = get_or<std::string>(r, "label", spec.kind, "retriever");
            if (spec.kind != "bm25" && spec.kind != "dense" && spec.kind != "run") {
                throw ValidationError("unknown retriever kind: " + spec.kind + " (expected bm25|dense|run)");
            }
            if (spec.kind == "run") {
                spec.run_file = path_or(r, "path", "", "retriever");
                if (spec.run_file.empty()) {
                    throw ValidationError("run retriever " + spec.label + " needs a path");
                }
            }
            e.retrievers.push_back(std::move(spec));
        }
        for (const auto& [label, path] : get_or<std::map<std::string, std::string>>(ej, "predictions", {}, w)) {
            e.predictions[label] = resolve(path);
        }
    }
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    const auto text = read_file(path.string());
    auto base = path.parent_path();
    if (base.empty()) base = ".";
    return parse_config(text, base);
}

}  // namespace smmqg
