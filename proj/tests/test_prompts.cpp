#include <catch2/catch_amalgamated.hpp>

#include "dmem/prompts.hpp"
#include "dmem/text.hpp"
#include "test_support.hpp"

using namespace dmem;
namespace ts = test_support;

TEST_CASE("filter template substitutes the question and expands the memory list") {
    PromptLibrary lib(ts::prompt_dir());
    std::string out = lib.render(tpl::memory_filter, {{"user_question", "where did she go?"},
                                                      {"memory_1", "she went hiking"}});
    CHECK(out.find("where did she go?") != std::string::npos);
    CHECK(out.find("1. she went hiking") != std::string::npos);
    CHECK(out.find("{memory_1}") == std::string::npos);
    CHECK(out.find("{memory_2}") == std::string::npos);
    CHECK(out.find("{user_question}") == std::string::npos);
    CHECK(out.find("\n...") == std::string::npos); // ellipsis line consumed by expansion
}

TEST_CASE("memory list expands beyond the three shown slots") {
    PromptLibrary lib(ts::prompt_dir());
    Vars vars = {{"user_question", "q"}};
    for (int i = 1; i <= 5; ++i)
        vars.emplace_back("memory_" + std::to_string(i), "item " + std::to_string(i));
    std::string out = lib.render(tpl::memory_filter, vars);
    CHECK(out.find("4. item 4") != std::string::npos);
    CHECK(out.find("5. item 5") != std::string::npos);
}

TEST_CASE("unbound placeholder raises invalid-argument naming it") {
    PromptLibrary lib(ts::prompt_dir());
    Vars vars = {{"speaker_1_user_id", "Alice"},
                 {"speaker_1_memories", "- m"},
                 {"speaker_2_user_id", "Bob"},
                 {"speaker_2_memories", "- m"}};
    CHECK_THROWS_WITH(lib.render(tpl::answer_generation, vars),
                      Catch::Matchers::ContainsSubstring("question"));
}

TEST_CASE("rendering is deterministic") {
    PromptLibrary lib(ts::prompt_dir());
    Vars vars = {{"question", "when?"}, {"gold_answer", "May"}, {"generated_answer", "May"}};
    CHECK(lib.render(tpl::answer_judge, vars) == lib.render(tpl::answer_judge, vars));
}

TEST_CASE("unknown template raises not-found") {
    PromptLibrary lib(ts::prompt_dir());
    CHECK_THROWS_AS(lib.render("no_such_template", {}), NotFound);
}

TEST_CASE("variables without placeholders are appended as sections in order") {
    PromptLibrary lib(ts::prompt_dir());
    std::string out = lib.render(tpl::fact_extraction, {{"question", "when did it happen?"},
                                                        {"History", "(none)"},
                                                        {"Conversation", "Alice: hello"}});
    auto q = out.find("# question:\nwhen did it happen?");
    auto h = out.find("# History:\n(none)");
    auto c = out.find("# Conversation:\nAlice: hello");
    REQUIRE(q != std::string::npos);
    REQUIRE(h != std::string::npos);
    REQUIRE(c != std::string::npos);
    CHECK(q < h);
    CHECK(h < c);
    // The template's own JSON examples survive rendering untouched.
    CHECK(out.find("{\"facts\": []}") != std::string::npos);
}

TEST_CASE("judge template substitutes single-brace placeholders") {
    PromptLibrary lib(ts::prompt_dir());
    std::string out = lib.render(tpl::answer_judge, {{"question", "Q?"},
                                                     {"gold_answer", "G"},
                                                     {"generated_answer", "P"}});
    CHECK(out.find("Question: Q?") != std::string::npos);
    CHECK(out.find("Gold answer: G") != std::string::npos);
    CHECK(out.find("Generated answer: P") != std::string::npos);
}

// Pins the on-disk template assets. These bytes are part of the engine's
// contract: edits here change every prompt the pipeline issues.
TEST_CASE("template assets match their pinned hashes") {
    struct Pin {
        const char* id;
        uint64_t hash;
    };
    static const Pin pins[] = {
        {"answer_generation", 0x259cb799c65e65a0ull},
        {"answer_judge", 0x493587418a173e0cull},
        {"consensus_judge", 0xfe223dc8bbec0064ull},
        {"fact_extraction", 0x3e9c8dc45865cc11ull},
        {"fact_filter", 0xd969645e964a6e1bull},
        {"majority_judge", 0xa44265c7b89e33ccull},
        {"memory_extraction", 0x4fce96c7ee4e1136ull},
        {"memory_filter", 0xbff5e9ddc9a157baull},
        {"memory_update", 0x7b3a29c1d0c66913ull},
        {"quality_audit", 0x43cbc057baf75eaaull},
    };
    PromptLibrary lib(ts::prompt_dir());
    REQUIRE(lib.ids().size() == std::size(pins));
    for (const auto& pin : pins) {
        INFO(pin.id);
        CHECK(text::fnv1a(lib.raw(pin.id)) == pin.hash);
    }
}
