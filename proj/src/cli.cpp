#include "smmqg/cli.hpp"

#include <cstdio>
#include <map>
#include <memory>

#include <CLI11.hpp>
#include <json.hpp>

#include "smmqg/config.hpp"
#include "smmqg/corpus.hpp"
#include "smmqg/error.hpp"
#include "smmqg/eval.hpp"
#include "smmqg/index.hpp"
#include "smmqg/parallel.hpp"
#include "smmqg/pipeline.hpp"
#include "smmqg/provider.hpp"
#include "smmqg/stats.hpp"
#include "smmqg/text.hpp"

namespace smmqg {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

fs::path into(const std::optional<fs::path>& dir, const fs::path& file) {
    return dir ? *dir / file.filename() : file;
}

void write_lines(const fs::path& path, const std::vector<std::string>& lines) {
    std::string body;
    for (const auto& l : lines) {
        body += l;
        body += '\n';
    }
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    write_file(path.string(), body);
}

void apply_overrides(RunConfig& cfg, const RunOverrides& o) {
    if (o.seed) {
        cfg.pipeline.rng_seed = *o.seed;
    }
    cfg.pipeline.jobs = o.jobs.value_or(default_jobs());
    if (o.out_dir) {
        fs::create_directories(*o.out_dir);
        cfg.output = into(o.out_dir, cfg.output);
        cfg.rejections = into(o.out_dir, cfg.rejections);
        cfg.transcript = into(o.out_dir, cfg.transcript);
        cfg.index = into(o.out_dir, cfg.index);
        cfg.eval.report_prefix = into(o.out_dir, cfg.eval.report_prefix);
        cfg.eval.verdicts = into(o.out_dir, cfg.eval.verdicts);
        cfg.eval.transcript = into(o.out_dir, cfg.eval.transcript);
    }
}

Corpus load_corpus(const RunConfig& cfg) {
    if (cfg.corpus.empty()) {
        throw ValidationError("config names no corpus");
    }
    if (!fs::exists(cfg.corpus)) {
        throw ValidationError("corpus not found: " + cfg.corpus.string());
    }
    return ingest_corpus(cfg.corpus.string(), cfg.min_text_chars);
}

std::vector<QuestionStyle> load_styles(const RunConfig& cfg) {
    std::vector<std::string> names = cfg.styles;
    if (names.empty()) {
        for (const auto& item : cfg.pipeline.plan) {
            if (std::find(names.begin(), names.end(), item.style) == names.end()) names.push_back(item.style);
        }
    }
    std::vector<QuestionStyle> styles;
    for (const auto& n : names) {
        styles.push_back(load_style(cfg.styles_dir / (n + ".json")));
        if (styles.back().name != n) {
            throw ValidationError("style file " + n + ".json declares name " + styles.back().name);
        }
    }
    return styles;
}

DenseIndex obtain_index(const RunConfig& cfg, Provider& provider, const Corpus& corpus, std::ostream& out) {
    const auto hash = corpus.content_hash();
    if (!cfg.index.empty()) {
        if (auto cached = DenseIndex::load(cfg.index, hash)) {
            out << "index: loaded " << cached->size() << " vectors from " << cfg.index.string() << "\n";
            return std::move(*cached);
        }
    }
    auto index = build_dense_index(provider, corpus, 32, cfg.pipeline.jobs);
    if (!cfg.index.empty()) {
        if (cfg.index.has_parent_path()) fs::create_directories(cfg.index.parent_path());
        index.save(cfg.index, hash);
    }
    out << "index: embedded " << index.size() << " sources (dim " << index.dim() << ")\n";
    return index;
}

template <typename Fn>
int guarded(std::ostream& err, Fn&& fn) {
    try {
        return fn();
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
    } catch (const fs::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
    } catch (const nlohmann::json::exception& e) {
        err << "error: " << e.what() << "\n";
    }
    return kExitError;
}

}  // namespace

int cmd_ingest(const fs::path& corpus, const std::optional<fs::path>& out, std::size_t min_text_chars,
               std::ostream& out_stream, std::ostream& err) {
    return guarded(err, [&] {
        const auto c = ingest_corpus(corpus.string(), min_text_chars);
        if (out) {
            if (out->has_parent_path()) fs::create_directories(out->parent_path());
            write_file(out->string(), corpus_to_jsonl(c));
        }
        out_stream << "text=" << c.count(Modality::Text) << " table=" << c.count(Modality::Table)
                   << " image=" << c.count(Modality::Image) << "\n";
        return kExitOk;
    });
}

int cmd_generate(const fs::path& config, const RunOverrides& overrides, const std::optional<fs::path>& replay,
                 std::ostream& out, std::ostream& err) {
    return guarded(err, [&] {
        auto cfg = load_config(config);
        const auto recorded_transcript = cfg.transcript;
        apply_overrides(cfg, overrides);
        auto corpus = load_corpus(cfg);
        const auto styles = load_styles(cfg);
        validate_plan(cfg.pipeline, corpus, styles);
        const auto assets = PromptAssets::load(cfg.prompts_dir, cfg.few_shot_mode);

        std::shared_ptr<Transcript> transcript;
        auto pcfg = cfg.provider;
        if (replay) {
            pcfg.backend = "replay";
            pcfg.replay_from = fs::absolute(replay->empty() ? recorded_transcript : *replay).string();
        } else {
            if (cfg.transcript.has_parent_path()) fs::create_directories(cfg.transcript.parent_path());
            transcript = std::make_shared<Transcript>(cfg.transcript);
        }
        auto provider = make_provider(pcfg, cfg.base_dir, transcript);

        bool needs_verbalisation = false;
        for (const auto& s : corpus.sources()) {
            needs_verbalisation |= s.modality == Modality::Image && (!s.verbalisation || s.verbalisation->empty());
        }
        if (needs_verbalisation) {
            corpus = verbalize_missing(*provider, assets.catalog.get("verbalize"), corpus);
        }
        const auto index = obtain_index(cfg, *provider, corpus, out);
        const auto weights = compute_seed_weights(index, cfg.k_seed, cfg.beta);
        const auto result = run_pipeline(cfg.pipeline, corpus, index, weights, *provider, assets, styles);

        std::vector<std::string> lines;
        for (const auto& s : result.samples) lines.push_back(sample_to_json_line(s));
        write_lines(cfg.output, lines);
        lines.clear();
        std::map<std::string, std::size_t> by_stage;
        for (const auto& r : result.rejections) {
            lines.push_back(rejection_to_json_line(r));
            ++by_stage[std::string(to_string(r.stage))];
        }
        write_lines(cfg.rejections, lines);

        out << "generated " << result.samples.size() << "/" << result.target << " samples in " << result.attempts
            << " attempts; " << result.rejections.size() << " rejected";
        for (const auto& [stage, n] : by_stage) out << " " << stage << "=" << n;
        out << "\n";
        out << "dataset: " << cfg.output.string() << "\n";
        if (!result.complete()) {
            err << "warning: attempt budget exhausted with " << result.samples.size() << " of " << result.target
                << " samples\n";
        }
        return kExitOk;
    });
}

int cmd_evaluate(const fs::path& config, const std::string& mode, const RunOverrides& overrides,
                 std::ostream& out, std::ostream& err) {
    if (mode != "retrieval" && mode != "qa") {
        err << "usage: evaluate --mode retrieval|qa (got " << mode << ")\n";
        return kExitUsage;
    }
    return guarded(err, [&] {
        auto cfg = load_config(config);
        apply_overrides(cfg, overrides);
        const auto corpus = load_corpus(cfg);
        const auto dataset = load_dataset(cfg.eval.dataset);
        if (cfg.eval.transcript.has_parent_path()) fs::create_directories(cfg.eval.transcript.parent_path());
        auto transcript = std::make_shared<Transcript>(cfg.eval.transcript);
        auto provider = make_provider(cfg.provider, cfg.base_dir, transcript);

        auto emit = [&](const Report& report, const std::string& suffix) {
            auto base = cfg.eval.report_prefix;
            base += "_" + suffix;
            auto json_path = base;
            json_path += ".json";
            auto txt_path = base;
            txt_path += ".txt";
            if (json_path.has_parent_path()) fs::create_directories(json_path.parent_path());
            write_file(json_path.string(), report.to_json());
            write_file(txt_path.string(), report.render());
            out << report.render() << "report: " << json_path.string() << "\n";
        };

        if (mode == "retrieval") {
            if (cfg.eval.retrievers.empty()) {
                throw ValidationError("eval block lists no retrievers");
            }
            std::vector<RetrievalSystem> systems;
            std::optional<Bm25Index> bm25;
            std::optional<DenseIndex> dense;
            for (const auto& spec : cfg.eval.retrievers) {
                if (spec.kind == "bm25") {
                    if (!bm25) bm25 = Bm25Index::build(corpus);
                    systems.push_back({spec.label, [&bm25](const QaSample& s, std::size_t k) {
                                           std::vector<std::string> ids;
                                           for (auto& hit : bm25->search(s.question, k)) ids.push_back(hit.id);
                                           return ids;
                                       }});
                } else if (spec.kind == "dense") {
                    if (!dense) dense = obtain_index(cfg, *provider, corpus, out);
                    systems.push_back({spec.label, [&dense, &provider](const QaSample& s, std::size_t k) {
                                           const auto q = provider->embed({s.question}).at(0);
                                           std::vector<std::string> ids;
                                           for (auto& hit : dense->knn(q, k)) ids.push_back(hit.id);
                                           return ids;
                                       }});
                } else {
                    auto run = std::make_shared<std::map<std::string, std::vector<std::string>>>(
                        load_run_file(spec.run_file));
                    systems.push_back({spec.label, [run, label = spec.label](const QaSample& s, std::size_t k) {
                                           auto it = run->find(s.id);
                                           if (it == run->end()) {
                                               throw ValidationError("run " + label + " has no entry for " + s.id);
                                           }
                                           auto ids = it->second;
                                           if (ids.size() > k) ids.resize(k);
                                           return ids;
                                       }});
                }
            }
            emit(run_retrieval_eval(dataset, systems, cfg.eval.ks, cfg.eval.group_by), "retrieval");
            return kExitOk;
        }

        if (cfg.eval.predictions.empty()) {
            throw ValidationError("eval block lists no predictions");
        }
        std::map<std::string, std::map<std::string, std::string>> predictions;
        for (const auto& [label, path] : cfg.eval.predictions) {
            predictions[label] = load_predictions(path);
        }
        const auto assets = PromptAssets::load(cfg.prompts_dir, cfg.few_shot_mode);
        const auto result = run_qa_eval(dataset, predictions, corpus, *provider, assets, cfg.eval.judge_template,
                                        cfg.eval.group_by, cfg.pipeline.jobs);
        std::vector<std::string> lines;
        for (const auto& [system, verdicts] : result.verdicts) {
            for (const auto& v : verdicts) lines.push_back(verdict_to_json_line(system, v));
        }
        write_lines(cfg.eval.verdicts, lines);
        emit(result.judge, "qa");
        emit(result.rouge, "rouge1");
        return kExitOk;
    });
}

int cmd_concur(const fs::path& report_a, const fs::path& report_b, const std::string& group, std::ostream& out,
               std::ostream& err) {
    return guarded(err, [&] {
        const auto a = load_report(report_a).ranked(group);
        const auto b = load_report(report_b).ranked(group);
        const auto r = kendall_tau(a, b);
        out << "tau=" << fmt("%.4f", r.tau) << " p=" << fmt("%.4g", r.p) << " n=" << a.items.size()
            << " concordant=" << r.concordant << " discordant=" << r.discordant
            << " method=" << (r.exact ? "exact" : "normal") << "\n";
        return kExitOk;
    });
}

int cmd_stats(const fs::path& input, const std::string& test, std::ostream& out, std::ostream& err) {
    if (test != "mwu" && test != "fisher") {
        err << "usage: stats --test mwu|fisher (got " << test << ")\n";
        return kExitUsage;
    }
    return guarded(err, [&] {
        std::vector<std::string> groups;
        std::map<std::string, std::vector<nlohmann::json>> values;
        std::size_t line_no = 0;
        for (const auto& line : split_lines(read_file(input.string()))) {
            ++line_no;
            if (trim(line).empty()) continue;
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::parse_error& e) {
                throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
            }
            if (!j.contains("group") || !j.contains("value")) {
                throw ValidationError("line " + std::to_string(line_no) + ": needs group and value");
            }
            const auto g = j["group"].is_string() ? j["group"].get<std::string>() : j["group"].dump();
            if (!values.contains(g)) groups.push_back(g);
            values[g].push_back(j["value"]);
        }
        if (groups.size() != 2) {
            throw ValidationError("labels file must contain exactly 2 groups, found " + std::to_string(groups.size()));
        }
        if (test == "mwu") {
            std::array<std::vector<double>, 2> xs;
            for (int k = 0; k < 2; ++k) {
                for (const auto& v : values[groups[k]]) {
                    if (!v.is_number()) throw ValidationError("mwu values must be numbers");
                    xs[k].push_back(v.get<double>());
                }
            }
            const auto r = mann_whitney_u(xs[0], xs[1]);
            out << "groups=" << groups[0] << "," << groups[1] << " n=" << xs[0].size() << "," << xs[1].size()
                << " U=" << fmt("%.1f", r.u) << " p=" << fmt("%.4g", r.p)
                << " method=" << (r.exact ? "exact" : "normal") << "\n";
            return kExitOk;
        }
        auto yes = [](const nlohmann::json& v) {
            if (v.is_boolean()) return v.get<bool>();
            if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) return v.get<int>() == 1;
            if (v.is_string()) {
                const auto s = to_lower(trim(v.get<std::string>()));
                if (s == "yes" || s == "1" || s == "true") return true;
                if (s == "no" || s == "0" || s == "false") return false;
            }
            throw ValidationError("fisher values must be yes/no, true/false or 1/0, got " + v.dump());
        };
        Table2x2 t;
        for (const auto& v : values[groups[0]]) (yes(v) ? t.a : t.b)++;
        for (const auto& v : values[groups[1]]) (yes(v) ? t.c : t.d)++;
        out << "groups=" << groups[0] << "," << groups[1] << " table=(" << t.a << "," << t.b << ";" << t.c << ","
            << t.d << ") p=" << fmt("%.4g", fisher_exact(t)) << "\n";
        return kExitOk;
    });
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Synthetic multimodal question generation and evaluation"};
    app.require_subcommand(1);

    RunOverrides overrides;
    unsigned jobs = 0;
    std::uint64_t seed = 0;
    std::string out_dir;
    auto add_run_flags = [&](CLI::App* sub) {
        sub->add_option("--jobs", jobs, "Worker threads (default: logical processors)")->check(CLI::PositiveNumber);
        sub->add_option("--seed", seed, "Override the config rng_seed");
        sub->add_option("--out", out_dir, "Write all outputs into this directory");
    };

    std::string corpus_path;
    std::string ingest_out;
    std::size_t min_chars = kDefaultMinTextChars;
    auto* ingest = app.add_subcommand("ingest", "Validate and normalize a corpus");
    ingest->add_option("corpus", corpus_path, "Corpus JSONL")->required();
    ingest->add_option("--out", ingest_out, "Write the normalized corpus here");
    ingest->add_option("--min-text-chars", min_chars, "Drop shorter text passages");

    std::string config;
    auto* generate = app.add_subcommand("generate", "Run the generation pipeline");
    generate->add_option("--config", config, "Run config (JSON)")->required();
    add_run_flags(generate);

    std::string replay_from;
    auto* replay = app.add_subcommand("replay", "Re-run generation from the recorded transcript");
    replay->add_option("--config", config, "Run config (JSON)")->required();
    replay->add_option("--from", replay_from, "Transcript to answer from (default: the config's transcript)");
    add_run_flags(replay);

    std::string mode;
    auto* evaluate = app.add_subcommand("evaluate", "Retrieval or QA evaluation");
    evaluate->add_option("--config", config, "Run config (JSON)")->required();
    evaluate->add_option("--mode", mode, "retrieval | qa")->required()->check(CLI::IsMember({"retrieval", "qa"}));
    add_run_flags(evaluate);

    std::string report_a;
    std::string report_b;
    std::string group{kAllGroup};
    auto* concur = app.add_subcommand("concur", "Kendall tau between two reports' system rankings");
    concur->add_option("report_a", report_a)->required();
    concur->add_option("report_b", report_b)->required();
    concur->add_option("--group", group, "Report column to rank by");

    std::string labels;
    std::string test;
    auto* stats = app.add_subcommand("stats", "Human-study significance tests");
    stats->add_option("input", labels, "Labels JSONL {group, value}")->required();
    stats->add_option("--test", test, "mwu | fisher")->required()->check(CLI::IsMember({"mwu", "fisher"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e, out, err);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    auto collect = [&](CLI::App* sub) {
        if (sub->count("--jobs") > 0) overrides.jobs = jobs;
        if (sub->count("--seed") > 0) overrides.seed = seed;
        if (sub->count("--out") > 0) overrides.out_dir = out_dir;
    };

    if (ingest->parsed()) {
        return cmd_ingest(corpus_path, ingest_out.empty() ? std::nullopt : std::optional<fs::path>(ingest_out),
                          min_chars, out, err);
    }
    if (generate->parsed() || replay->parsed()) {
        auto* sub = generate->parsed() ? generate : replay;
        collect(sub);
        if (!replay->parsed()) {
            return cmd_generate(config, overrides, std::nullopt, out, err);
        }
        return cmd_generate(config, overrides, replay_from.empty() ? fs::path() : fs::path(replay_from), out, err);
    }
    if (evaluate->parsed()) {
        collect(evaluate);
        return cmd_evaluate(config, mode, overrides, out, err);
    }
    if (concur->parsed()) {
        return cmd_concur(report_a, report_b, group, out, err);
    }
    return cmd_stats(labels, test, out, err);
}

}  // namespace smmqg
