#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mergectx/error.hpp"
#include "mergectx/text.hpp"
#include "support.hpp"

using namespace mergectx;
using namespace testsupport;

namespace {

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

Chunk chunk(ChunkId id, const std::string& text) { return make_original_chunk(id, text, tok()); }

const std::string kAlcala =
    "Larry Alcala earned his Bachelor of Fine Arts in Painting at the University of the Philippines (UP) in 1950. "
    "He became a professor at the same university from 1951 to 1981. "
    "He also received the Australian Cultural Award accompanied by a travel study grant in 1975. "
    "He started his cartooning career in 1946 while still attending school.";
const std::string kRotc =
    "ROTC in the Philippines began in 1912 when the Philippine Constabulary commenced with military instruction "
    "at the University of the Philippines. The university's Board of Regents then made representations to the Unit. "
    "In 1866, by Auditor School, the two-year officers' courses were established. "
    "In 1867, the courses were transformed into a Military Law Academy.";

} // namespace

TEST_CASE("render_prompt") {
    CHECK(render_prompt({TemplateKind::symmetric_merge, "Q: {query}"}, {{"query", "x"}}) == "Q: x");
    CHECK_THROWS_WITH_AS(render_prompt({TemplateKind::symmetric_merge, "Q: {query}"}, {}),
                         "unbound placeholder: query", ConfigError);
    SUBCASE("no recursive substitution") {
        CHECK(render_prompt({TemplateKind::symmetric_merge, "{query}|{chunk_a}"},
                            {{"query", "{chunk_a}"}, {"chunk_a", "A"}}) == "{chunk_a}|A");
    }
    SUBCASE("asymmetric template keeps every binding verbatim, in template order") {
        const auto tmpl = default_template(TemplateKind::asymmetric_merge);
        const auto out = render_prompt(tmpl, {{"query", "QQQ 1"}, {"chunk_a", "AAA {2}"}, {"chunk_b", "BBB 3"}});
        const auto pq = out.find("QQQ 1"), pa = out.find("AAA {2}"), pb = out.find("BBB 3");
        REQUIRE(pq != std::string::npos);
        REQUIRE(pa != std::string::npos);
        REQUIRE(pb != std::string::npos);
        const auto body = tmpl.body;
        const auto order = [&](const char* ph) { return body.find(ph); };
        CHECK((order("{query}") < order("{chunk_a}")) == (pq < pa));
        CHECK((order("{chunk_a}") < order("{chunk_b}")) == (pa < pb));
    }
}

TEST_CASE("built-in templates") {
    const auto sym = default_template(TemplateKind::symmetric_merge).body;
    const auto asym = default_template(TemplateKind::asymmetric_merge).body;
    const auto ans = default_template(TemplateKind::answer_generation).body;
    CHECK(sym.find("Do not answer the Query") != std::string::npos);
    CHECK(asym.find("Chunk A is the Anchor (Primary Context)") != std::string::npos);
    CHECK(ans.find("Answer the question based ONLY on the provided context") != std::string::npos);
    for (auto kind : {TemplateKind::symmetric_merge, TemplateKind::asymmetric_merge, TemplateKind::answer_generation}) {
        const auto placeholders = template_placeholders(default_template(kind).body);
        for (const auto& need : required_placeholders(kind))
            CHECK(std::find(placeholders.begin(), placeholders.end(), need) != placeholders.end());
    }
}

TEST_CASE("prompt files match the built-in templates") {
    const std::filesystem::path dir = MERGECTX_SOURCE_DIR "/prompts";
    CHECK(read_file(dir / "symmetric_merge.txt") == default_template(TemplateKind::symmetric_merge).body);
    CHECK(read_file(dir / "asymmetric_merge.txt") == default_template(TemplateKind::asymmetric_merge).body);
    CHECK(read_file(dir / "answer_generation.txt") == default_template(TemplateKind::answer_generation).body);
    CHECK(load_template(TemplateKind::asymmetric_merge, dir / "asymmetric_merge.txt").body ==
          default_template(TemplateKind::asymmetric_merge).body);
}

TEST_CASE("load_template rejects a file missing a required placeholder") {
    const auto path = std::filesystem::temp_directory_path() / "mergectx_bad_template.txt";
    std::ofstream(path) << "Only {query} here";
    CHECK_THROWS_AS(load_template(TemplateKind::symmetric_merge, path), ConfigError);
    std::filesystem::remove(path);
}

TEST_CASE("extractive fusion") {
    const auto q = make_query("military instruction university");

    SUBCASE("identical parents fuse to one copy") {
        const auto a = chunk(0, "Military instruction began early. The university grew.");
        const auto f = extractive_fuse(a, chunk(1, a.text), q, MergeStrategy::symmetric, 2, tok());
        CHECK(f.text == a.text);
        CHECK(f.token_len == a.token_len);
    }
    SUBCASE("disjoint relevant sentences concatenate") {
        const auto a = chunk(0, "Military drills happened.");
        const auto b = chunk(1, "The university opened.");
        const auto f = extractive_fuse(a, b, q, MergeStrategy::asymmetric, 2, tok());
        CHECK(f.text == "Military drills happened. The university opened.");
        CHECK(f.token_len == a.token_len + b.token_len);
    }
    SUBCASE("b duplicated inside a yields filtered a") {
        const auto a = chunk(0, "Military instruction at the university began. Cats sleep. The university is old.");
        const auto b = chunk(1, "The university is old.");
        CHECK(extractive_fuse_text(a, b, q, MergeStrategy::symmetric) ==
              "Military instruction at the university began. The university is old.");
    }
    SUBCASE("irrelevant sentences are dropped; order follows the mode") {
        const auto a = chunk(0, "A1 military one. Irrelevant cats. A2 university two.");
        const auto b = chunk(1, "B1 instruction three. B2 military four. Dogs bark loudly.");
        CHECK(extractive_fuse_text(a, b, q, MergeStrategy::asymmetric) ==
              "A1 military one. A2 university two. B1 instruction three. B2 military four.");
        CHECK(extractive_fuse_text(a, b, q, MergeStrategy::symmetric) ==
              "A1 military one. B1 instruction three. A2 university two. B2 military four.");
    }
    SUBCASE("nothing overlaps: keep the best sentence of each") {
        const auto a = chunk(0, "Cats sleep. Cats purr.");
        const auto b = chunk(1, "Dogs bark.");
        CHECK(extractive_fuse_text(a, b, q, MergeStrategy::symmetric) == "Cats sleep. Dogs bark.");
    }
    SUBCASE("the multi-hop example keeps both bridge sentences") {
        const auto qa = make_query("When did military instruction start at the place where Larry Alcala was educated?");
        const auto a = chunk(0, kAlcala);
        const auto b = chunk(1, kRotc);
        const auto f = extractive_fuse(a, b, qa, MergeStrategy::asymmetric, 2, tok());
        CHECK(f.text.find("Larry Alcala earned his Bachelor of Fine Arts in Painting at the University of the Philippines") !=
              std::string::npos);
        CHECK(f.text.find("military instruction at the University of the Philippines.") != std::string::npos);
        CHECK(f.token_len <= a.token_len + b.token_len);
        CHECK(f.provenance == std::vector<ChunkId>{0, 1});
    }
}

TEST_CASE("extractive fusion: length bound, anchor-first order, idempotence on random inputs") {
    std::mt19937 rng(11);
    const auto q = make_query("When did military instruction begin at the university?");
    for (int trial = 0; trial < 300; ++trial) {
        const auto inst = random_instance(rng, 2);
        const auto& a = inst[0].chunk;
        const auto& b = inst[1].chunk;
        for (auto mode : {MergeStrategy::symmetric, MergeStrategy::asymmetric}) {
            const auto f = extractive_fuse(a, b, q, mode, 9, tok());
            CHECK(f.token_len <= a.token_len + b.token_len);
            CHECK(f.token_len > 0);
            const auto again = extractive_fuse(a, b, q, mode, 9, tok());
            CHECK(again.text == f.text);
            const auto self = extractive_fuse(f, chunk(10, f.text), q, mode, 11, tok());
            CHECK(self.text == f.text);
        }
        const auto asym = split_sentences(extractive_fuse_text(a, b, q, MergeStrategy::asymmetric));
        const auto sa = split_sentences(a.text);
        bool seen_b = false;
        for (const auto& s : asym) {
            const bool from_a = std::find(sa.begin(), sa.end(), s) != sa.end();
            if (!from_a) seen_b = true;
            else CHECK_FALSE(seen_b);
        }
    }
}

TEST_CASE("fuse wraps backends") {
    const auto q = make_query("military");
    const auto a = chunk(0, "Military drills happened.");
    const auto b = chunk(1, "The military marched.");

    SUBCASE("empty response falls back to extractive with a warning") {
        ReplayFuser replay({{{0, 1, MergeStrategy::symmetric}, "   "}});
        const auto r = fuse(replay, a, b, q, MergeStrategy::symmetric, 5, tok());
        CHECK(r.chunk.text == extractive_fuse_text(a, b, q, MergeStrategy::symmetric));
        REQUIRE(r.warnings.size() == 1);
        CHECK(r.warnings[0] == kWarnFallback);
    }
    SUBCASE("growth is flagged, not rejected") {
        ReplayFuser replay({{{0, 1, MergeStrategy::asymmetric}, "one two three four five six seven eight nine ten"}});
        const auto r = fuse(replay, a, b, q, MergeStrategy::asymmetric, 5, tok());
        CHECK(r.chunk.token_len == 10);
        CHECK(std::find(r.warnings.begin(), r.warnings.end(), std::string(kWarnGrowth)) != r.warnings.end());
        CHECK(r.chunk.id == 5);
        CHECK(r.chunk.depth == 1);
    }
    SUBCASE("backend failure carries the pair") {
        PoisonFuser poison(1);
        try {
            fuse(poison, a, b, q, MergeStrategy::symmetric, 5, tok());
            FAIL("expected FusionError");
        } catch (const FusionError& e) {
            CHECK(e.left() == 0);
            CHECK(e.right() == 1);
        }
    }
    SUBCASE("missing replay entry is an error") {
        ReplayFuser replay({});
        CHECK_THROWS_AS(fuse(replay, a, b, q, MergeStrategy::symmetric, 5, tok()), FusionError);
    }
    SUBCASE("empty parent is rejected") {
        ExtractiveFuser ex;
        CHECK_THROWS_AS(fuse(ex, chunk(3, " "), b, q, MergeStrategy::symmetric, 5, tok()), FusionError);
    }
}

TEST_CASE("replay fixture file") {
    const auto path = std::filesystem::temp_directory_path() / "mergectx_replay.json";
    std::ofstream(path) << R"([{"left": 0, "right": 1, "mode": "asymmetric", "response": "fused text"}])";
    const auto r = ReplayFuser::from_file(path);
    CHECK(r.fuse_text(chunk(0, "a"), chunk(1, "b"), make_query("q"), MergeStrategy::asymmetric) == "fused text");
    CHECK_THROWS(r.fuse_text(chunk(1, "a"), chunk(0, "b"), make_query("q"), MergeStrategy::asymmetric));
    std::filesystem::remove(path);
}
