#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "dmem/metrics.hpp"

using namespace dmem;

TEST_CASE("normalization lowercases, strips punctuation and articles") {
    CHECK(normalize("The Answer!") == std::vector<std::string>{"answer"});
    CHECK(normalize("") == std::vector<std::string>{});
    CHECK(normalize("7 May, 2023") == std::vector<std::string>{"7", "may", "2023"});
    CHECK(normalize("A an THE") == std::vector<std::string>{});
    CHECK(normalize("it's fine") == std::vector<std::string>{"its", "fine"});
}

TEST_CASE("f1 hand-computed values") {
    CHECK(f1("7 May 2023", "7 May 2023") == 1.0);
    // Two of three tokens overlap on both sides: precision = recall = 2/3.
    CHECK(f1("8 May 2023", "7 May 2023") == Catch::Approx(0.6667).margin(1e-4));
    CHECK(f1("alpha", "beta") == 0.0);
    CHECK(f1("", "") == 1.0);
    CHECK(f1("something", "") == 0.0);
    CHECK(f1("", "something") == 0.0);
    CHECK(f1("the", "the") == 1.0); // both normalize to empty
}

TEST_CASE("f1 counts token multiplicities") {
    // pred [x, x], gold [x]: precision 1/2, recall 1 -> F1 = 2/3.
    CHECK(f1("x x", "x") == Catch::Approx(2.0 / 3.0));
}

TEST_CASE("f1 and bleu identity on random non-empty strings is exactly 1") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 50; ++i) {
        int words = 1 + static_cast<int>(rng() % 8);
        std::string s;
        for (int w = 0; w < words; ++w) {
            if (w) s += " ";
            int len = 4 + static_cast<int>(rng() % 5);
            for (int c = 0; c < len; ++c) s += static_cast<char>('a' + rng() % 26);
        }
        CHECK(f1(s, s) == 1.0);
        CHECK(bleu(s, s) == 1.0);
    }
}

TEST_CASE("bleu stays within [0, 1] and flags disjoint predictions") {
    std::mt19937_64 rng(23);
    for (int i = 0; i < 100; ++i) {
        std::string a = "tok" + std::to_string(rng() % 50);
        std::string b = "tok" + std::to_string(rng() % 50) + " tok" + std::to_string(rng() % 50);
        double v = bleu(a, b);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK(bleu("completely different words here", "nothing matches at all anywhere") <= 0.05);
}

// Frozen from tests/oracle/bleu_reference.py, a standalone implementation
// of sentence BLEU with the same tokenizer and smoothing constant.
TEST_CASE("bleu matches the reference implementation on fixed pairs") {
    struct Pair {
        const char* pred;
        const char* gold;
        double expected;
    };
    static const Pair pairs[] = {
        {"the cat sat on the mat", "the cat sat on the mat", 1.000000000000},
        {"the cat sat", "the cat sat down", 0.606530659713},
        {"he went to the market yesterday morning", "he went to the market on sunday morning",
         0.454801904703},
        {"7 May 2023", "8 May 2023", 0.321829794869},
        {"she bought three apples and two pears", "she bought two pears and three apples",
         0.125743342968},
        {"alpha beta gamma delta", "delta gamma beta alpha", 0.113621936647},
        {"completely different words here", "nothing matches at all anywhere", 0.035186297400},
        {"a quick brown fox jumps over the lazy dog", "the quick brown fox jumped over a lazy dog",
         0.274941620352},
        {"paris", "paris france", 0.367879441171},
        {"i visited my grandmother last weekend in portland",
         "i visited my grandmother in portland two weekends ago", 0.362824143463},
    };
    for (const auto& p : pairs) {
        INFO(p.pred << " / " << p.gold);
        CHECK(bleu(p.pred, p.gold) == Catch::Approx(p.expected).margin(1e-6));
    }
}

TEST_CASE("bleu empty-side conventions mirror f1") {
    CHECK(bleu("", "") == 1.0);
    CHECK(bleu("word", "") == 0.0);
    CHECK(bleu("", "word") == 0.0);
}

TEST_CASE("metrics are pure functions") {
    CHECK(f1("a b c", "b c d") == f1("a b c", "b c d"));
    CHECK(bleu("a b c", "b c d") == bleu("a b c", "b c d"));
}
