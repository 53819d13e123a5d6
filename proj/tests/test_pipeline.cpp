#include <catch_amalgamated.hpp>

#include "oracles.hpp"
#include "smmqg/error.hpp"
#include "smmqg/pipeline.hpp"
#include "smmqg/text.hpp"
#include "test_util.hpp"

using namespace smmqg;
using Catch::Matchers::ContainsSubstring;
using testutil::rule;

namespace {

std::string all_text(const CompletionRequest& r) { return r.flattened_text(); }

CandidateSet candidates_of(std::vector<Source> sources, ModalityRequirement m) {
    CandidateSet c;
    c.entity = "Entity";
    c.seed_id = sources.front().id;
    c.requirement = m;
    for (std::size_t i = 0; i < sources.size(); ++i) c.candidates.push_back({sources[i], i + 1});
    return c;
}

RejectionStage stage_of(const Outcome<QaSample>& o) { return std::get<Rejection>(o).stage; }

struct PipelineFixture {
    Corpus corpus = testutil::fixture_corpus();
    PromptAssets assets = testutil::shipped_assets();
    std::vector<QuestionStyle> styles = testutil::shipped_styles();

    PipelineResult run(Provider& provider, std::vector<PlanItem> plan, unsigned jobs = 1, std::uint64_t seed = 5) {
        PipelineConfig cfg;
        cfg.plan = std::move(plan);
        cfg.rng_seed = seed;
        cfg.jobs = jobs;
        const auto index = build_dense_index(provider, corpus);
        const auto weights = compute_seed_weights(index, 5, 0.1);
        return run_pipeline(cfg, corpus, index, weights, provider, assets, styles);
    }
};

std::vector<MockRule> happy_rules() {
    return {rule("extract_entity", {}, "Veloria Glacier"),
            rule("generate", {"Modality requirements: 1 text\n"}, "Which river does it feed? | Kessel River | 1"),
            rule("generate", {"Modality requirements: 1 text, 1 table\n"}, "Q | A | 1, 3"),
            rule("verify", {}, "Pass")};
}

}  // namespace

TEST_CASE("modality requirement helpers") {
    const ModalityRequirement m{1, 2, 0};
    CHECK(m.describe() == "1 text, 2 table");
    CHECK(m.label() == "Text-Table");
    CHECK(ModalityRequirement{0, 0, 1}.label() == "Image");
    CHECK(m.total() == 3);
    CHECK(ModalityRequirement::from_array(m.as_array()) == m);
    CHECK_THROWS_AS((ModalityRequirement{0, 0, 0}.validate()), ValidationError);
    CHECK_THROWS_AS((ModalityRequirement{-1, 2, 0}.validate()), ValidationError);
}

TEST_CASE("citation parsing") {
    CHECK(parse_citations("1", 3) == std::vector<std::size_t>{1});
    CHECK(parse_citations("Passage 2", 3) == std::vector<std::size_t>{2});
    CHECK(parse_citations("Image 3", 3) == std::vector<std::size_t>{3});
    CHECK(parse_citations("1, 3", 4) == std::vector<std::size_t>{1, 3});
    CHECK(parse_citations("Passages 1 and 2", 4) == std::vector<std::size_t>{1, 2});
    CHECK(parse_citations("[1]; [3].", 4) == std::vector<std::size_t>{1, 3});
    CHECK(parse_citations("2, 2, 1", 4) == std::vector<std::size_t>{2, 1});
    CHECK_THROWS_AS(parse_citations("5", 4), ParseError);
    CHECK_THROWS_AS(parse_citations("0", 4), ParseError);
    CHECK_THROWS_AS(parse_citations("", 4), ParseError);
    CHECK_THROWS_AS(parse_citations("the first one", 4), ParseError);
    CHECK_THROWS_AS(parse_citations("1 + 2", 4), ParseError);
}

TEST_CASE("generation parsing") {
    const auto ok = parse_generation("Q? | A. | 1, 3", 4);
    REQUIRE(std::holds_alternative<ParsedQa>(ok));
    CHECK(std::get<ParsedQa>(ok).question == "Q?");
    CHECK(std::get<ParsedQa>(ok).answer == "A.");
    CHECK(std::get<ParsedQa>(ok).citations == std::vector<std::size_t>{1, 3});

    const auto wrapped = parse_generation("Question | Answer | Citation:\n<Who? | Her | Passage 2>", 3);
    REQUIRE(std::holds_alternative<ParsedQa>(wrapped));
    CHECK(std::get<ParsedQa>(wrapped).citations == std::vector<std::size_t>{2});

    // Extra pipes belong to the answer.
    const auto piped = parse_generation("Q | a | b | 1", 2);
    REQUIRE(std::holds_alternative<ParsedQa>(piped));
    CHECK(std::get<ParsedQa>(piped).answer == "a | b");

    CHECK(std::get<Rejection>(parse_generation("None", 4)).stage == RejectionStage::Refusal);
    CHECK(std::get<Rejection>(parse_generation("Q | A", 4)).stage == RejectionStage::ParseFail);
    CHECK(std::get<Rejection>(parse_generation("Q | A | 9", 4)).stage == RejectionStage::ParseFail);
    CHECK(std::get<Rejection>(parse_generation(" | A | 1", 4)).stage == RejectionStage::ParseFail);
    CHECK(std::get<Rejection>(parse_generation("", 4)).stage == RejectionStage::ParseFail);
}

TEST_CASE("source enumeration") {
    const std::vector<Source> sources{testutil::text_source("t", "body text", "Title"),
                                      testutil::table_source("b", "Tab", "x | y"),
                                      testutil::image_source("i", "A cap", "desc")};
    const auto block = enumerate_sources(sources, {"1", "2", "3"});
    CHECK(block.passages == "Passage 1: Title: body text\nPassage 2: Tab\nx | y");
    CHECK(block.has_images);
    REQUIRE(block.media.size() == 1);
    CHECK(block.media[0].text == "Image 3: A cap");
    CHECK(block.media[0].attachments == std::vector<std::string>{"img/x.jpg"});
    CHECK(enumerate_sources({}, {}).passages == "(no passages)");
    CHECK_THROWS_AS(enumerate_sources(sources, {"1"}), ValidationError);
}

TEST_CASE("entity extraction") {
    const auto assets = testutil::shipped_assets();
    Trace trace;
    SECTION("passes the entity through") {
        auto rec = testutil::recorded_provider({rule("extract_entity", {"Federer"}, "tennis")});
        const auto out = extract_entity(*rec.provider, assets,
                                        testutil::text_source("s", "Roger Federer won twenty titles."), trace);
        CHECK(std::get<std::string>(out) == "tennis");
        const auto req = rec.backend->requests("extract_entity").at(0);
        CHECK(req.temperature == kEntityTemperature);
        CHECK(trace.refs.size() == 1);
    }
    SECTION("image seeds show caption and verbalisation") {
        auto rec = testutil::recorded_provider({rule("extract_entity", {}, "Magha Puja")});
        extract_entity(*rec.provider, assets, testutil::image_source("i", "Magha Puja", "Monks walk with candles"),
                       trace);
        const auto text = all_text(rec.backend->requests().at(0));
        CHECK_THAT(text, ContainsSubstring("Magha Puja"));
        CHECK_THAT(text, ContainsSubstring("Monks walk with candles"));
        auto bare = testutil::image_source("j", "cap", "");
        bare.verbalisation.reset();
        CHECK_THROWS_AS(extract_entity(*rec.provider, assets, bare, trace), ValidationError);
    }
    SECTION("a refusal is a parse failure") {
        auto provider = testutil::mock_provider({rule("extract_entity", {}, "None")});
        const auto out = extract_entity(*provider, assets, testutil::text_source("s", "x"), trace);
        CHECK(std::get<Rejection>(out).stage == RejectionStage::ParseFail);
    }
    SECTION("first non-empty line, list markers stripped") {
        auto provider = testutil::mock_provider({rule("extract_entity", {}, "\n1. Lake Baikal\n2. Siberia")});
        const auto out = extract_entity(*provider, assets, testutil::text_source("s", "x"), trace);
        CHECK(std::get<std::string>(out) == "Lake Baikal");
    }
}

TEST_CASE("candidate retrieval") {
    auto provider = testutil::mock_provider({});
    const auto corpus = testutil::fixture_corpus();
    const auto index = build_dense_index(*provider, corpus);

    const auto cand = retrieve_candidates(index, *provider, corpus, "Quillan Ferry", {1, 2, 0}, 2, "seed");
    CHECK(cand.candidates.size() == 6);
    CHECK(tally(cand.ids(), corpus) == ModalityRequirement{2, 4, 0});
    // Text candidates come first, ranked within their modality.
    CHECK(cand.candidates[0].source.modality == Modality::Text);
    CHECK(cand.candidates[1].rank == 2);
    CHECK(cand.candidates[2].rank == 1);

    const auto one_image = Corpus::from_sources({testutil::text_source("t", "x"),
                                                 testutil::image_source("i", "cap", "v")});
    const auto small_index = build_dense_index(*provider, one_image);
    CHECK(retrieve_candidates(small_index, *provider, one_image, "e", {0, 0, 1}, 2, "t").candidates.size() == 1);
    CHECK_THROWS_AS(retrieve_candidates(small_index, *provider, one_image, "e", {0, 1, 0}, 2, "t"), ValidationError);
    CHECK_THROWS_AS(retrieve_candidates(small_index, *provider, one_image, "e", {1, 0, 0}, 0, "t"), ValidationError);
}

TEST_CASE("text candidates match the brute-force top-2") {
    auto provider = testutil::mock_provider({});
    std::vector<Source> texts;
    for (const auto* body : {"glacier ice melt river", "orchard apple cider press", "ferry cable strait boat",
                             "telescope dome observatory star", "dye madder red cloth"}) {
        texts.push_back(testutil::text_source(std::string("d") + body[0], body));
    }
    const auto corpus = Corpus::from_sources(texts);
    const auto index = build_dense_index(*provider, corpus);
    std::vector<std::pair<std::string, std::vector<double>>> entries;
    for (const auto& s : texts) entries.emplace_back(s.id, hashing_embedding(search_text(s), 64).values);
    for (const auto* entity : {"apple cider", "river ice", "red star", "boat"}) {
        const auto cand = retrieve_candidates(index, *provider, corpus, entity, {1, 0, 0}, 2, "x");
        CHECK(cand.ids() == oracle::knn(entries, hashing_embedding(entity, 64).values, 2));
    }
}

TEST_CASE("question generation over candidates") {
    const auto assets = testutil::shipped_assets();
    const auto styles = testutil::shipped_styles();
    const auto& style = testutil::style_named(styles, "compare_contrast");
    const auto cand = candidates_of({testutil::text_source("a", "x"), testutil::text_source("b", "y"),
                                     testutil::table_source("c", "T", "1 | 2"), testutil::table_source("d", "U", "3")},
                                    {1, 1, 0});
    Trace trace;
    SECTION("citations pick sources, the rest become distractors") {
        auto rec = testutil::recorded_provider({rule("generate", {}, "Q? | A. | 1, 3")});
        const auto out = generate_qa(*rec.provider, assets, cand, style, trace);
        const auto& s = std::get<QaSample>(out);
        CHECK(s.source_ids == std::vector<std::string>{"a", "c"});
        CHECK(s.distractor_ids == std::vector<std::string>{"b", "d"});
        CHECK(s.style == "compare_contrast");
        const auto req = rec.backend->requests("generate").at(0);
        CHECK(req.temperature == kGreedyTemperature);
        CHECK_THAT(all_text(req), ContainsSubstring("Modality requirements: 1 text, 1 table"));
        CHECK_THAT(all_text(req), ContainsSubstring(style.description));
    }
    SECTION("refusal and malformed output") {
        auto none = testutil::mock_provider({rule("generate", {}, "None")});
        CHECK(stage_of(generate_qa(*none, assets, cand, style, trace)) == RejectionStage::Refusal);
        auto two = testutil::mock_provider({rule("generate", {}, "Q | A")});
        CHECK(stage_of(generate_qa(*two, assets, cand, style, trace)) == RejectionStage::ParseFail);
    }
    SECTION("image candidates use the image prompt and media turns") {
        const auto with_image = candidates_of({testutil::text_source("a", "x"), testutil::image_source("i", "cap", "v")},
                                              {1, 0, 1});
        auto rec = testutil::recorded_provider({rule("generate", {}, "Q | A | 1, 2")});
        generate_qa(*rec.provider, assets, with_image, style, trace);
        const auto req = rec.backend->requests("generate").at(0);
        CHECK(req.has_attachments());
        CHECK(req.turns[0].text == assets.catalog.get("generate_image_instruction")
                                       .render({{"style_prompt", style.description},
                                                {"modality_requirements", "1 text, 1 image"}}));
    }
}

TEST_CASE("modality verification") {
    const auto corpus = Corpus::from_sources({testutil::text_source("t", "x"), testutil::table_source("b", "T", "1"),
                                              testutil::table_source("c", "U", "2"),
                                              testutil::image_source("i", "cap", "v")});
    QaSample draft;
    draft.source_ids = {"b", "i"};
    CHECK_FALSE(verify_modalities(draft, corpus, {0, 1, 1}).has_value());
    draft.source_ids = {"b", "c"};
    CHECK(verify_modalities(draft, corpus, {0, 1, 1})->stage == RejectionStage::ModalityMismatch);
    draft.source_ids = {"t"};
    CHECK(verify_modalities(draft, corpus, {2, 0, 0})->stage == RejectionStage::ModalityMismatch);
}

TEST_CASE("verification responses") {
    CHECK_FALSE(interpret_verification("Pass").has_value());
    CHECK_FALSE(interpret_verification("  pass.").has_value());
    CHECK(interpret_verification("Fail, Criterion 2")->stage == RejectionStage::StyleCheckFail);
    CHECK(interpret_verification("Fail: Criterion 1")->stage == RejectionStage::CorrectnessFail);
    CHECK(interpret_verification("Fail: criteria 1 and 2")->stage == RejectionStage::CorrectnessFail);
    CHECK(interpret_verification("Fail")->stage == RejectionStage::CorrectnessFail);
    CHECK(interpret_verification("maybe")->stage == RejectionStage::ParseFail);
}

TEST_CASE("verify_qa renders question, answer and style") {
    const auto assets = testutil::shipped_assets();
    const auto styles = testutil::shipped_styles();
    const auto& style = testutil::style_named(styles, "numerical");
    QaSample draft;
    draft.question = "How many more?";
    draft.answer = "Seven";
    const std::vector<Source> sources{testutil::text_source("t", "x"), testutil::image_source("i", "cap", "v")};
    auto rec = testutil::recorded_provider({rule("verify", {"How many more?", "Seven"}, "Pass")});
    Trace trace;
    CHECK_FALSE(verify_qa(*rec.provider, assets, draft, style, sources, trace).has_value());
    const auto req = rec.backend->requests("verify").at(0);
    CHECK(req.turns[0].text == assets.catalog.get("verify_image_instruction").render({}));
    CHECK_THAT(all_text(req), ContainsSubstring(style.description));
    CHECK(trace.refs.size() == 1);
}

TEST_CASE("shipped styles") {
    const auto styles = testutil::shipped_styles();
    using M = ModalityRequirement;
    const std::vector<M> pairs{{2, 0, 0}, {1, 1, 0}, {1, 0, 1}, {0, 2, 0}, {0, 1, 1}, {0, 0, 2}};
    CHECK(testutil::style_named(styles, "info_extraction").allowed_modalities == std::vector<M>{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    CHECK(testutil::style_named(styles, "compare_contrast").allowed_modalities == pairs);
    CHECK(testutil::style_named(styles, "compound").allowed_modalities == pairs);
    CHECK(testutil::style_named(styles, "numerical").allowed_modalities ==
          std::vector<M>{{1, 0, 0}, {0, 1, 0}, {2, 0, 0}, {1, 1, 0}, {0, 2, 0}});
    const auto& mh = testutil::style_named(styles, "multi_hop");
    CHECK(mh.multihop);
    CHECK(mh.allowed_modalities == std::vector<M>(pairs.begin(), pairs.end() - 1));
    CHECK(mh.intermediate_few_shots.size() == 3);
    for (const auto& s : styles) {
        INFO(s.name);
        CHECK(s.few_shots.size() == 3);
        for (const auto& shot : s.few_shots) {
            if (!s.multihop) CHECK(std::holds_alternative<ParsedQa>(parse_generation(shot.output, 9)));
        }
    }
    CHECK_THROWS_AS(parse_style(R"({"name":"x"})"), ValidationError);
}

TEST_CASE("plan validation") {
    PipelineFixture f;
    PipelineConfig cfg;
    cfg.plan = {{"info_extraction", {1, 0, 0}, 1}};
    CHECK_NOTHROW(validate_plan(cfg, f.corpus, f.styles));

    cfg.plan = {{"nonexistent", {1, 0, 0}, 1}};
    CHECK_THROWS_AS(validate_plan(cfg, f.corpus, f.styles), ValidationError);
    cfg.plan = {{"info_extraction", {1, 1, 0}, 1}};
    CHECK_THROWS_WITH(validate_plan(cfg, f.corpus, f.styles), ContainsSubstring("does not allow"));
    cfg.plan = {{"info_extraction", {1, 0, 0}, 0}};
    CHECK_THROWS_AS(validate_plan(cfg, f.corpus, f.styles), ValidationError);
    cfg.plan = {};
    CHECK_THROWS_AS(validate_plan(cfg, f.corpus, f.styles), ValidationError);

    const auto text_only = Corpus::from_sources({testutil::text_source("t", "x")});
    cfg.plan = {{"info_extraction", {0, 0, 1}, 1}};
    CHECK_THROWS_WITH(validate_plan(cfg, text_only, f.styles), ContainsSubstring("image"));

    auto wide = testutil::style_named(f.styles, "multi_hop");
    wide.name = "wide_hop";
    wide.allowed_modalities.push_back({1, 1, 1});
    cfg.plan = {{"wide_hop", {1, 1, 1}, 1}};
    CHECK_THROWS_WITH(validate_plan(cfg, f.corpus, {wide}), ContainsSubstring("exactly two"));
}

TEST_CASE("attempt generators depend only on seed and attempt") {
    auto a = attempt_rng(9, 3);
    auto b = attempt_rng(9, 3);
    auto c = attempt_rng(9, 4);
    auto d = attempt_rng(10, 3);
    const auto x = a();
    CHECK(x == b());
    CHECK(x != c());
    CHECK(x != d());
}

TEST_CASE("pipeline: fully scripted run") {
    PipelineFixture f;
    auto provider = testutil::mock_provider(happy_rules());
    const auto r1 = f.run(*provider, {{"info_extraction", {1, 0, 0}, 5}});
    CHECK(r1.samples.size() == 5);
    CHECK(r1.rejections.empty());
    CHECK(r1.attempts == 5);
    CHECK(r1.complete());
    CHECK(r1.samples.front().id == "q0001");
    CHECK(r1.samples.back().id == "q0005");
    for (const auto& s : r1.samples) {
        CHECK(s.entity == "Veloria Glacier");
        CHECK(s.transcript_refs.size() == 3);
        CHECK(tally(s.source_ids, f.corpus) == s.requirement);
    }

    auto lines = [](const PipelineResult& r) {
        std::string out;
        for (const auto& s : r.samples) out += sample_to_json_line(s) + "\n";
        return out;
    };
    auto again = testutil::mock_provider(happy_rules());
    CHECK(lines(f.run(*again, {{"info_extraction", {1, 0, 0}, 5}})) == lines(r1));
    auto threaded = testutil::mock_provider(happy_rules());
    CHECK(lines(f.run(*threaded, {{"info_extraction", {1, 0, 0}, 5}}, 4)) == lines(r1));
    auto other_seed = testutil::mock_provider(happy_rules());
    CHECK(lines(f.run(*other_seed, {{"info_extraction", {1, 0, 0}, 5}}, 1, 6)) != lines(r1));
}

TEST_CASE("pipeline: every generation refused") {
    PipelineFixture f;
    auto provider = testutil::mock_provider({rule("extract_entity", {}, "Veloria Glacier"),
                                             rule("generate", {}, "None")});
    const auto r = f.run(*provider, {{"info_extraction", {1, 0, 0}, 3}});
    CHECK(r.samples.empty());
    CHECK(r.attempts == 15);
    CHECK(r.rejections.size() == 15);
    CHECK_FALSE(r.complete());
    for (const auto& rej : r.rejections) CHECK(rej.stage == RejectionStage::Refusal);
}

TEST_CASE("pipeline: one refusal in three generations") {
    PipelineFixture f;
    // Generation calls 1, 4, 7, ... are refused. With one job the first wave
    // runs 4 attempts (calls 1-4: two refusals), the second wave runs the two
    // missing attempts (calls 5-6: both accepted).
    auto hook = [](const CompletionRequest& req, std::size_t) -> std::optional<std::string> {
        static std::size_t generate_calls = 0;
        if (req.tag != "generate") return std::nullopt;
        return ++generate_calls % 3 == 1 ? std::optional<std::string>("None") : std::nullopt;
    };
    auto rec = testutil::recorded_provider(happy_rules(), hook);
    const auto r = f.run(*rec.provider, {{"info_extraction", {1, 0, 0}, 4}});
    CHECK(r.samples.size() == 4);
    CHECK(r.rejections.size() == 2);
    CHECK(r.attempts == 6);
    CHECK(r.samples.size() + r.rejections.size() == r.attempts);
    for (const auto& rej : r.rejections) {
        CHECK(rej.stage == RejectionStage::Refusal);
        CHECK(rej.style == "info_extraction");
        CHECK_FALSE(rej.seed_id.empty());
    }
}

TEST_CASE("pipeline: verification and modality failures are recorded") {
    PipelineFixture f;
    auto provider = testutil::mock_provider({rule("extract_entity", {}, "Quillan Ferry"),
                                             rule("generate", {"1 text, 1 table\n"}, "Q | A | 1, 2"),
                                             rule("generate", {"Modality requirements: 1 text\n"}, "Q | A | 1"),
                                             rule("verify", {}, "Fail: Criterion 2")});
    const auto r = f.run(*provider, {{"compare_contrast", {1, 1, 0}, 1}, {"info_extraction", {1, 0, 0}, 1}});
    CHECK(r.samples.empty());
    CHECK(r.attempts == 10);
    std::map<RejectionStage, int> stages;
    for (const auto& rej : r.rejections) ++stages[rej.stage];
    CHECK(stages[RejectionStage::ModalityMismatch] == 5);
    CHECK(stages[RejectionStage::StyleCheckFail] == 5);
}

TEST_CASE("dataset JSON round trip") {
    QaSample s;
    s.id = "q0007";
    s.question = "Q";
    s.answer = "A";
    s.source_ids = {"a", "b"};
    s.distractor_ids = {"c"};
    s.style = "multi_hop";
    s.requirement = {1, 0, 1};
    s.entity = "E";
    s.seed_id = "a";
    s.transcript_refs = {"h1"};
    s.multihop = MultihopTrace{{"q1", "q2"}, {"a1", "E"}, {std::vector<std::string>{"a"}, {"b"}}};
    const auto line = sample_to_json_line(s);
    CHECK_THAT(line, ContainsSubstring(R"("intermediate_questions":["q1","q2"])"));
    CHECK_THAT(line, ContainsSubstring(R"("intermediate_answers":["a1","E"])"));
    const auto back = sample_from_json_line(line);
    CHECK(back.id == s.id);
    CHECK(back.source_ids == s.source_ids);
    CHECK(back.requirement == s.requirement);
    REQUIRE(back.multihop.has_value());
    CHECK(back.multihop->source_ids[1] == std::vector<std::string>{"b"});
    CHECK(sample_to_json_line(back) == line);

    s.multihop.reset();
    CHECK(sample_to_json_line(s).find("intermediate") == std::string::npos);
    CHECK_THROWS_AS(sample_from_json_line(R"({"question":"x"})"), ValidationError);

    testutil::TempDir dir;
    auto no_id = s;
    no_id.id.clear();
    write_file((dir / "d.jsonl").string(), sample_to_json_line(s) + "\n" + sample_to_json_line(no_id) + "\n");
    const auto loaded = load_dataset(dir / "d.jsonl");
    REQUIRE(loaded.size() == 2);
    CHECK_FALSE(loaded[1].id.empty());
    CHECK(loaded[1].id != loaded[0].id);

    Rejection rej;
    rej.stage = RejectionStage::Refusal;
    rej.attempt = 3;
    CHECK_THAT(rejection_to_json_line(rej), ContainsSubstring(R"("stage":"Refusal")"));
}
