#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "mergectx/error.hpp"
#include "mergectx/evaluation.hpp"
#include "support.hpp"

using namespace mergectx;
using namespace testsupport;

namespace {

std::vector<std::string> golds(std::initializer_list<const char*> g) { return {g.begin(), g.end()}; }

EvalRecord record(const std::string& id, const std::string& question, std::vector<std::string> answers,
                  std::vector<std::pair<std::string, double>> chunks) {
    EvalRecord r{make_query(question, id), {}, {}, std::move(answers), "fixture"};
    for (std::size_t i = 0; i < chunks.size(); ++i) {
        r.chunks.push_back(make_original_chunk(i, chunks[i].first, tok()));
        r.given_scores.emplace_back(chunks[i].second);
    }
    return r;
}

std::vector<EvalRecord> two_records() {
    return {record("r1", "When did military instruction begin?", {"1912"},
                   {{"Military instruction began in 1912.", 0.9}, {"The harbor froze.", 0.1}, {"Cadets drilled daily.", 0.4}}),
            record("r2", "Who drew the campus cartoons?", {"Larry Alcala"},
                   {{"Larry Alcala drew the campus cartoons.", 0.8}, {"Rain fell.", 0.2}})};
}

struct Fixture {
    ExtractiveFuser fuser;
    BigramNllBackend nll;
    std::map<std::string, std::string> answers{{"r1", "1912"}, {"r2", "Larry Alcala"}};
    ReplayGenerator replay{answers};
    EvalBackends backends(const Generator& g) {
        return EvalBackends{tok(),
                            [](const EvalRecord& r) {
                                std::map<ChunkId, double> t;
                                for (std::size_t i = 0; i < r.chunks.size(); ++i) t[i] = *r.given_scores[i];
                                return std::make_shared<FixedTableScorer>(t);
                            },
                            fuser, &nll, g};
    }
};

} // namespace

TEST_CASE("normalize_answer") {
    CHECK(normalize_answer("The University of the Philippines") == "university of philippines");
    CHECK(normalize_answer("1912") == "1912");
    CHECK(normalize_answer("  Yes. ") == "yes");
    CHECK(normalize_answer("An apple, a day!") == "apple day");
}

TEST_CASE("exact_match") {
    CHECK(exact_match("1912", golds({"1912"})) == 1);
    CHECK(exact_match("in 1912", golds({"1912"})) == 0);
    CHECK(exact_match("The University of the Philippines", golds({"University of the Philippines"})) == 1);
    CHECK(exact_match("1913", golds({"1912", "1913"})) == 1);
    CHECK_THROWS_AS(exact_match("x", {}), ConfigError);
}

TEST_CASE("token_f1") {
    CHECK(token_f1("1912", golds({"1912"})) == 1.0);
    CHECK(token_f1("in 1912", golds({"1912"})) == doctest::Approx(2.0 / 3.0));
    CHECK(token_f1("", golds({"1912"})) == 0.0);
    CHECK(token_f1("", golds({"the"})) == 1.0);
    CHECK(token_f1("x y y", golds({"y y z"})) == doctest::Approx(2.0 / 3.0));
    CHECK(token_f1("a b b", golds({"b b c"})) == doctest::Approx(0.8));
    CHECK(token_f1("b b", golds({"b"})) == doctest::Approx(2.0 / 3.0));
    CHECK(token_f1("x", golds({"y", "x z"})) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("substring_accuracy") {
    CHECK(substring_accuracy("in 1912", golds({"1912"})) == 1);
    CHECK(substring_accuracy("1912", golds({"in 1912"})) == 0);
    CHECK(substring_accuracy("Final Answer: 1912", golds({"1912"})) == 1);
}

TEST_CASE("metric monotonicity on random strings") {
    std::mt19937 rng(9);
    const std::vector<std::string> vocab{"the", "1912", "University", "of", "Philippines", "a", "in", "Alcala,"};
    auto phrase = [&] {
        std::string s;
        for (int n = 1 + rng() % 4; n > 0; --n) s += vocab[rng() % vocab.size()] + " ";
        return s;
    };
    for (int i = 0; i < 500; ++i) {
        const auto p = phrase();
        const std::vector<std::string> g{phrase()};
        if (exact_match(p, g)) {
            CHECK(token_f1(p, g) == 1.0);
            CHECK(substring_accuracy(p, g) == 1);
        }
        CHECK(token_f1(p, std::vector<std::string>{p}) == 1.0);
        const double f = token_f1(p, g);
        CHECK(f >= 0.0);
        CHECK(f <= 1.0);
    }
}

TEST_CASE("evaluate_pipeline") {
    Fixture fx;
    const auto records = two_records();

    SUBCASE("perfect fixtures") {
        PipelineSpec spec;
        spec.method = PipelineSpec::Method::topk;
        const auto rep = evaluate_pipeline(records, spec, fx.backends(fx.replay));
        CHECK(rep.em == 100.0);
        CHECK(rep.f1 == 100.0);
        CHECK(rep.acc == 100.0);
        CHECK(rep.evaluated == 2);
        CHECK(rep.method_tag == "topk(k=5)");
    }
    SUBCASE("one exact, one empty answer") {
        ReplayGenerator half({{"r1", "1912"}, {"r2", ""}});
        PipelineSpec spec;
        spec.method = PipelineSpec::Method::merge;
        spec.multiplier = 1.0;
        const auto rep = evaluate_pipeline(records, spec, fx.backends(half), 2);
        CHECK(rep.em == 50.0);
        CHECK(rep.f1 == 50.0);
        CHECK(rep.rows[0].merge_rounds >= 1);
    }
    SUBCASE("aggregates ignore record order") {
        PipelineSpec spec;
        spec.method = PipelineSpec::Method::merge;
        ReplayGenerator mixed({{"r1", "in 1912"}, {"r2", "Alcala"}});
        auto reversed = records;
        std::reverse(reversed.begin(), reversed.end());
        const auto a = evaluate_pipeline(records, spec, fx.backends(mixed));
        const auto b = evaluate_pipeline(reversed, spec, fx.backends(mixed));
        CHECK(a.em == b.em);
        CHECK(a.f1 == doctest::Approx(b.f1));
        CHECK(a.acc == b.acc);
    }
    SUBCASE("backend errors become row errors; empty records are skipped") {
        auto more = records;
        more.push_back(record("r3", "Anything?", {"x"}, {{"Some text.", 0.5}}));
        more.push_back(EvalRecord{make_query("Empty?", "r4"), {}, {}, {"x"}, "fixture"});
        PipelineSpec spec;
        spec.method = PipelineSpec::Method::topk;
        const auto rep = evaluate_pipeline(more, spec, fx.backends(fx.replay));
        CHECK(rep.evaluated == 2);
        CHECK(rep.errors == 1);
        CHECK(rep.skipped == 1);
        CHECK(rep.rows[2].status.rfind("error: ", 0) == 0);
        CHECK(rep.rows[3].status == "skipped");
        CHECK(rep.em == 100.0);
    }
    SUBCASE("gold-in-context generator measures answer retention") {
        GoldInContextGenerator gold;
        PipelineSpec spec;
        spec.method = PipelineSpec::Method::topk;
        spec.k = 1;
        const auto rep = evaluate_pipeline(records, spec, fx.backends(gold));
        CHECK(rep.acc == 100.0);
    }
    SUBCASE("empty record list is an error") {
        CHECK_THROWS(evaluate_pipeline({}, PipelineSpec{}, fx.backends(fx.replay)));
    }
}

TEST_CASE("report rendering is deterministic and excludes wall time by default") {
    Fixture fx;
    PipelineSpec spec;
    spec.method = PipelineSpec::Method::merge;
    const auto records = two_records();
    const auto a = report_to_csv(evaluate_pipeline(records, spec, fx.backends(fx.replay), 2));
    const auto b = report_to_csv(evaluate_pipeline(records, spec, fx.backends(fx.replay), 1));
    CHECK(a == b);
    CHECK(a.find("wall_ms") == std::string::npos);
    CHECK(a.rfind("method,record,dataset,status,em,f1,acc,context_tokens,merge_rounds,prediction\n", 0) == 0);
    CHECK(a.find(",ALL,,") != std::string::npos);
    const auto timed = report_to_csv(evaluate_pipeline(records, spec, fx.backends(fx.replay)), true);
    CHECK(timed.find("wall_ms") != std::string::npos);

    std::vector<EvalReport> reps{evaluate_pipeline(records, spec, fx.backends(fx.replay))};
    const auto table = reports_to_table(reps);
    CHECK(table.find("100.0") != std::string::npos);
}

TEST_CASE("render_context orders by descending score") {
    std::vector<ScoredChunk> ctx{sc(0, 0.1, "low."), sc(1, 0.9, "high.")};
    CHECK(render_context(ctx) == "high.\n\nlow.");
}

TEST_CASE("dataset loading") {
    const auto path = std::filesystem::temp_directory_path() / "mergectx_dataset.jsonl";
    std::ofstream(path) << R"({"id": "q1", "question": "When?", "answers": ["1912"], "chunks": [{"text": "In 1912.", "score": 1}], "dataset": "toy"}
{"question": "Who?", "answers": ["Larry"], "chunks": []}
)";
    const auto recs = read_dataset_jsonl(path, tok());
    REQUIRE(recs.size() == 2);
    CHECK(recs[0].query.id == "q1");
    CHECK(recs[0].dataset_tag == "toy");
    CHECK(recs[0].all_scored());
    CHECK(recs[1].query.id == "1");
    CHECK(recs[1].chunks.empty());
    std::ofstream(path) << R"({"question": "Who?", "answers": []})" << "\n";
    CHECK_THROWS_WITH_AS(read_dataset_jsonl(path, tok()), doctest::Contains("line 1"), ConfigError);
    std::filesystem::remove(path);
}

TEST_CASE("latency bench counts calls and rounds") {
    Fixture fx;
    GoldInContextGenerator gold;
    auto backends = fx.backends(gold);
    backends.scorer_for = [](const EvalRecord&) { return std::make_shared<LexicalOverlapScorer>(); };
    const std::vector<EvalRecord> recs{synthetic_record(16, tok())};
    const std::vector<BenchConfig> cfgs{{MergeStrategy::symmetric, MergeSchedule::sequential, 2.0},
                                        {MergeStrategy::symmetric, MergeSchedule::hierarchical, 2.0}};
    const auto t = bench_latency(recs, cfgs, std::chrono::milliseconds(2), 8, backends);
    REQUIRE(t.rows.size() == 2);
    CHECK(t.rows[0].calls == 14);
    CHECK(t.rows[0].rounds == 14);
    CHECK(t.rows[1].calls == 14);
    CHECK(t.rows[1].rounds == 3);
    CHECK(t.rows[1].m_final == 2);
    CHECK(t.speedup.count("symmetric") == 1);
    CHECK(latency_to_csv(t).rfind("method,N,M_final,B,calls,rounds,wall_ms\nsymmetric/sequential,16,2,8,14,14,", 0) == 0);

    SUBCASE("B = 1 makes rounds equal to pairs") {
        const auto one = bench_latency(recs, cfgs, std::chrono::milliseconds(1), 1, backends);
        CHECK(one.rows[1].rounds == one.rows[1].calls);
    }
    CHECK_THROWS(bench_latency(recs, cfgs, std::chrono::milliseconds(0), 8, backends));
}
