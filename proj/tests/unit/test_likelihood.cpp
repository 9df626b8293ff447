#include "doctest.h"

#include <cmath>
#include <sstream>

#include "mergectx/error.hpp"
#include "mergectx/text.hpp"
#include "support.hpp"

using namespace mergectx;
using namespace testsupport;

namespace {

std::vector<std::string> words(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

/// Laplace bigram NLL computed by direct counting over the anchor for each step.
double bigram_oracle_nll(const std::string& source, const std::string& anchor) {
    const auto a = words(anchor), s = words(source);
    std::set<std::string> vocab(a.begin(), a.end());
    vocab.insert(s.begin(), s.end());
    const double v = static_cast<double>(vocab.size()) + 1.0;
    double total = 0.0;
    std::string prev = a.empty() ? "<s>" : a.back();
    for (const auto& w : s) {
        double pair = 0, from = 0;
        for (std::size_t i = 0; i + 1 < a.size(); ++i) {
            if (a[i] == prev) {
                from += 1;
                if (a[i + 1] == w) pair += 1;
            }
        }
        total += std::log((pair + 1.0) / (from + v));
        prev = w;
    }
    return -total / static_cast<double>(s.size());
}

Chunk chunk(ChunkId id, const std::string& text) { return make_original_chunk(id, text, tok()); }

} // namespace

TEST_CASE("uniform backend gives ln V per token") {
    UniformNllBackend u(16);
    CHECK(std::abs(conditional_nll(u, chunk(0, "a b c d e"), chunk(1, "x")) - std::log(16.0)) < 1e-12);
    CHECK(std::abs(conditional_nll(u, chunk(0, "z"), chunk(1, "")) - 2.772588722239781) < 1e-12);
    CHECK_THROWS_AS(UniformNllBackend(1), ConfigError);
}

TEST_CASE("conditional_nll is the negated mean of the per-token logprobs") {
    EchoNll echo({-1.0, -2.0, -3.0});
    CHECK(std::abs(conditional_nll(echo, chunk(0, "three token source"), chunk(1, "anchor")) - 2.0) < 1e-12);
    EchoNll uneven({-0.1, -0.25, -1.7, -0.05});
    const double want = (0.1 + 0.25 + 1.7 + 0.05) / 4.0;
    CHECK(std::abs(conditional_nll(uneven, chunk(0, "a b c d"), chunk(1, "x")) - want) < 1e-12);
}

TEST_CASE("conditional_nll errors") {
    UniformNllBackend u(16);
    CHECK_THROWS_WITH(conditional_nll(u, chunk(0, "   "), chunk(1, "x")), "empty source chunk");

    class ShortBackend final : public NllBackend {
    public:
        std::vector<double> source_logprobs(const Chunk&, const Chunk&) const override { return {-1.0}; }
        std::string kind() const override { return "short"; }
    } short_backend;
    CHECK_THROWS_WITH(conditional_nll(short_backend, chunk(0, "two tokens"), chunk(1, "x")),
                      "logprob alignment failure");
}

TEST_CASE("bigram oracle agrees with direct counting") {
    BigramNllBackend bigram;
    const std::vector<std::pair<std::string, std::string>> cases{
        {"the cat sat on the mat", "a dog and the cat sat on the mat today"},
        {"the cat sat", ""},
        {"x y z", "x y z x y z"},
        {"rain fell", "snow fell on the hills and rain fell"},
    };
    for (const auto& [s, a] : cases) {
        CHECK(conditional_nll(bigram, chunk(0, s), chunk(1, a)) == doctest::Approx(bigram_oracle_nll(s, a)).epsilon(1e-12));
    }
}

TEST_CASE("bigram: an anchor containing the source beats a disjoint one") {
    BigramNllBackend bigram;
    const std::string source = "military instruction at the university began in nineteen twelve";
    const std::string containing = "records show that military instruction at the university began in nineteen twelve";
    const std::string disjoint = "harbor ice formed early and ships waited offshore until spring thaw arrived";
    const double near = conditional_nll(bigram, chunk(0, source), chunk(1, containing));
    const double far = conditional_nll(bigram, chunk(0, source), chunk(2, disjoint));
    CHECK(near < far);
    CHECK(near >= 0.0);
    SUBCASE("determinism") {
        CHECK(conditional_nll(bigram, chunk(0, source), chunk(1, containing)) == near);
    }
}

TEST_CASE("anchor truncation keeps the tail") {
    CHECK(truncate_to_tail("a b c d", 2) == "c d");
    CHECK(truncate_to_tail("a b", 5) == "a b");
    BigramNllBackend limited(1.0, 3);
    BigramNllBackend full;
    CHECK(conditional_nll(limited, chunk(0, "c d e"), chunk(1, "q r s a b c d")) ==
          doctest::Approx(conditional_nll(full, chunk(0, "c d e"), chunk(1, "b c d"))));
}

TEST_CASE("best_anchor") {
    const auto src = sc(0, 0.1);
    SUBCASE("argmin over a table") {
        TableNll table({{{0, 1}, 2.1}, {{0, 2}, 1.3}, {{0, 3}, 4.0}});
        std::vector<ScoredChunk> cands{sc(1, 0.5), sc(2, 0.5), sc(3, 0.5)};
        CHECK(best_anchor(table, src, cands).id() == 2);
        CHECK(best_anchor(table, src, cands, 4).id() == 2);
    }
    SUBCASE("equal values go to the lowest id") {
        UniformNllBackend u(16);
        std::vector<ScoredChunk> cands{sc(5, 0.9), sc(3, 0.2), sc(4, 0.5)};
        CHECK(best_anchor(u, src, cands).id() == 3);
    }
    SUBCASE("the candidate holding the source sentence wins") {
        BigramNllBackend bigram;
        const auto source = sc(0, 0.1, "Cadets drilled on the parade ground every morning.");
        std::vector<ScoredChunk> cands{
            sc(1, 0.4, "The library holds maps of the northern provinces."),
            sc(2, 0.3, "Officers taught tactics. Cadets drilled on the parade ground every morning. Rain fell."),
            sc(3, 0.6, "A cartoonist drew strips for the campus paper."),
            sc(4, 0.2, "The harbor froze during that long winter."),
        };
        CHECK(best_anchor(bigram, source, cands).id() == 2);
    }
    SUBCASE("appending worse candidates changes nothing") {
        TableNll table({{{0, 1}, 2.0}, {{0, 2}, 1.0}, {{0, 3}, 5.0}, {{0, 4}, 1.5}});
        std::vector<ScoredChunk> cands{sc(1, 0.5), sc(2, 0.5)};
        const auto before = best_anchor(table, src, cands).id();
        cands.push_back(sc(3, 0.5));
        cands.push_back(sc(4, 0.5));
        CHECK(best_anchor(table, src, cands).id() == before);
    }
    SUBCASE("errors") {
        UniformNllBackend u(16);
        CHECK_THROWS_WITH(best_anchor(u, src, {}), "no anchor available");
        std::vector<ScoredChunk> with_self{src, sc(1, 0.5)};
        CHECK_THROWS(best_anchor(u, src, with_self));
    }
}

TEST_CASE("pairwise matrices") {
    SUBCASE("identical chunks under cosine") {
        HashingEmbedder e;
        std::vector<ScoredChunk> two{sc(0, 0.2, "same words here"), sc(1, 0.8, "same words here")};
        const auto m = pairwise_matrix(two, SimilarityMetric::cosine, &e, nullptr);
        CHECK(m.ids == std::vector<ChunkId>{1, 0});
        CHECK(m.at(0, 1) == doctest::Approx(1.0));
        CHECK(m.at(1, 0) == doctest::Approx(1.0));
        CHECK(std::isnan(m.at(0, 0)));
    }
    SUBCASE("uniform NLL") {
        UniformNllBackend u(16);
        std::vector<ScoredChunk> two{sc(0, 0.2), sc(1, 0.8)};
        const auto m = pairwise_matrix(two, SimilarityMetric::nll, nullptr, &u);
        CHECK(std::abs(m.at(0, 1) - std::log(16.0)) < 1e-12);
        CHECK(std::abs(m.at(1, 0) - std::log(16.0)) < 1e-12);
    }
    SUBCASE("fixed embedding table, hand-computed cosines, CSV layout") {
        FixedEmbeddingTable e({{"a", {1, 0, 0}}, {"b", {1, 1, 0}}, {"c", {0, 3, 4}}});
        std::vector<ScoredChunk> three{sc(0, 0.9, "a"), sc(1, 0.5, "b"), sc(2, 0.1, "c")};
        const auto m = pairwise_matrix(three, SimilarityMetric::cosine, &e, nullptr);
        const double ab = 1.0 / std::sqrt(2.0), ac = 0.0, bc = 3.0 / (std::sqrt(2.0) * 5.0);
        CHECK(m.at(0, 1) == doctest::Approx(ab));
        CHECK(m.at(0, 2) == doctest::Approx(ac));
        CHECK(m.at(1, 2) == doctest::Approx(bc));
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j)
                if (i != j) CHECK(std::abs(m.at(i, j) - m.at(j, i)) < 1e-9);
        const auto csv = matrix_to_csv(m);
        CHECK(csv.rfind("# metric: cosine\nid,0,1,2\n0,,", 0) == 0);
        CHECK(csv.find("\n2,0,") != std::string::npos);
    }
    SUBCASE("a failing backend reports the finished rows") {
        class FailSecondRow final : public NllBackend {
        public:
            std::vector<double> source_logprobs(const Chunk& s, const Chunk&) const override {
                if (s.id == 1) throw TransportError("boom", false);
                return std::vector<double>(split_whitespace(s.text).size(), -1.0);
            }
            std::string kind() const override { return "fail"; }
        } failing;
        std::vector<ScoredChunk> three{sc(0, 0.9), sc(1, 0.5), sc(2, 0.1)};
        try {
            pairwise_matrix(three, SimilarityMetric::nll, nullptr, &failing);
            FAIL("expected MatrixError");
        } catch (const MatrixError& e) {
            CHECK(e.rows_done() == 1);
            CHECK(e.partial().at(0, 1) == doctest::Approx(1.0));
            CHECK(std::isnan(e.partial().at(1, 0)));
        }
    }
    SUBCASE("needs two chunks") {
        UniformNllBackend u(16);
        std::vector<ScoredChunk> one{sc(0, 0.1)};
        CHECK_THROWS(pairwise_matrix(one, SimilarityMetric::nll, nullptr, &u));
    }
}
