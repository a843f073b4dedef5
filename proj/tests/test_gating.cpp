#include <catch2/catch_amalgamated.hpp>

#include <set>

#include "dmem/gating.hpp"
#include "test_support.hpp"

using namespace dmem;
namespace ts = test_support;

namespace {

using Cond = ScriptedBackend::Condition;

struct Engine {
    ts::Rig rig;
    MemoryStore store{64};
    std::unique_ptr<Mem0Star> mem0;
    std::unique_ptr<Deliberator> deliberator;
    std::unique_ptr<DMemEngine> engine;

    Engine() : rig(ts::make_rig()) {
        mem0 = std::make_unique<Mem0Star>(store, *rig.gateway);
        deliberator = std::make_unique<Deliberator>(*mem0, *rig.gateway);
        engine = std::make_unique<DMemEngine>(*mem0, *deliberator, *rig.gateway);
    }
};

const char* kAllPass = R"({"relevance": {"status": "pass"},
                           "faithfulness": {"status": "pass"},
                           "completeness_relevance": {"status": "pass"}})";

} // namespace

TEST_CASE("policy names parse to kinds and labels") {
    CHECK(parse_policy("fast").kind == PolicyKind::AlwaysFast);
    CHECK(parse_policy("filter").use_filter);
    CHECK(parse_policy("majority").kind == PolicyKind::MajorityVoting);
    CHECK(parse_policy("consensus").kind == PolicyKind::Consensus);
    CHECK(parse_policy("quality").kind == PolicyKind::QualityGating);
    CHECK(parse_policy("deliberate").kind == PolicyKind::AlwaysDeliberate);
    CHECK_THROWS_AS(parse_policy("nope"), InvalidArgument);
    CHECK(policy_label(parse_policy("fast")) == "Mem0*");
    CHECK(policy_label(parse_policy("deliberate")) == "Full Deliberation");
}

TEST_CASE("sample_answers draws three diverse candidates over one retrieval") {
    Engine e;
    std::vector<std::string> seen_blocks;
    e.rig.backend->register_script(
        tpl::answer_generation,
        [&seen_blocks](const Vars& vars) {
            if (const std::string* block = find_var(vars, "speaker_1_memories"))
                seen_blocks.push_back(*block);
            return true;
        },
        {{"A", std::nullopt, 0.0}, {"A", std::nullopt, 0.0}, {"B", std::nullopt, 0.0}});

    AnswerTrace trace;
    GatePolicy policy = parse_policy("majority");
    auto sampled = e.engine->sample_answers(ts::make_conv(4), "q", policy, trace);
    CHECK(sampled.answers == std::vector<std::string>{"A", "A", "B"});
    CHECK(trace.count_calls(tpl::answer_generation) == 3);
    size_t embeds = 0;
    for (const auto& c : trace.calls)
        if (c.kind == "embed") ++embeds;
    CHECK(embeds == 1);
    // All three samples saw the identical rendered context.
    REQUIRE(seen_blocks.size() == 3);
    CHECK(seen_blocks[0] == seen_blocks[1]);
    CHECK(seen_blocks[1] == seen_blocks[2]);
}

TEST_CASE("majority judge accepts a 2-of-3 match and returns a verbatim candidate") {
    Engine e;
    e.rig.backend->register_script(tpl::majority_judge,
                                   R"({"consensus": true, "answer": "A"})");
    AnswerTrace trace;
    auto verdict = e.engine->judge_majority("q", {"A", "A", "B"}, trace);
    CHECK_FALSE(verdict.trigger);
    CHECK(verdict.selected_answer == "A");
}

TEST_CASE("majority judge without consensus triggers the fallback") {
    Engine e;
    e.rig.backend->register_script(tpl::majority_judge, R"({"consensus": false})");
    AnswerTrace trace;
    auto verdict = e.engine->judge_majority("q", {"A", "B", "C"}, trace);
    CHECK(verdict.trigger);
    CHECK_FALSE(verdict.selected_answer.has_value());
}

TEST_CASE("a judge answer outside the candidate list counts as no consensus") {
    Engine e;
    e.rig.backend->register_script(tpl::majority_judge,
                                   R"({"consensus": true, "answer": "invented"})");
    AnswerTrace trace;
    auto verdict = e.engine->judge_majority("q", {"A", "A", "B"}, trace);
    CHECK(verdict.trigger);
}

TEST_CASE("unparseable judge output conservatively triggers") {
    Engine e;
    e.rig.backend->register_script(tpl::consensus_judge, "not json");
    AnswerTrace trace;
    auto verdict = e.engine->judge_consensus("q", {"A", "A", "A"}, trace);
    CHECK(verdict.trigger);
    CHECK(trace.parse_degradations == 1);
}

TEST_CASE("consensus judge demands full 3-of-3 agreement") {
    Engine e;
    e.rig.backend->register_script(
        tpl::consensus_judge, {Cond{"answer_3", Cond::Op::Equals, "A"}},
        {{R"({"consensus": true, "answer": "A"})", std::nullopt, 0.0}});
    e.rig.backend->register_script(tpl::consensus_judge, R"({"consensus": false})");

    AnswerTrace t1;
    CHECK_FALSE(e.engine->judge_consensus("q", {"A", "A", "A"}, t1).trigger);
    AnswerTrace t2;
    CHECK(e.engine->judge_consensus("q", {"A", "A", "B"}, t2).trigger);
}

TEST_CASE("vote judging requires exactly three answers") {
    Engine e;
    AnswerTrace trace;
    CHECK_THROWS_AS(e.engine->judge_majority("q", {"A", "B"}, trace), InvalidArgument);
}

TEST_CASE("quality audit passes all three dimensions") {
    Engine e;
    e.rig.backend->register_script(tpl::quality_audit, kAllPass);
    ContextSet ctx;
    ctx.groups = {{"Alice", {{1, "m", 0.9}}}, {"Bob", {}}};
    AnswerTrace trace;
    auto verdict = e.engine->quality_audit("q", ctx, "the answer", trace);
    CHECK_FALSE(verdict.trigger);
    CHECK(verdict.selected_answer == "the answer");
    REQUIRE(verdict.dimensions.has_value());
    CHECK(verdict.dimensions->at("relevance") == "pass");
}

TEST_CASE("any failed dimension triggers the fallback") {
    Engine e;
    e.rig.backend->register_script(tpl::quality_audit,
                                   R"({"relevance": {"status": "pass"},
                                       "faithfulness": {"status": "pass"},
                                       "completeness_relevance": {"status": "fail"}})");
    ContextSet ctx;
    ctx.groups = {{"Alice", {}}, {"Bob", {}}};
    AnswerTrace trace;
    auto verdict = e.engine->quality_audit("q", ctx, "a", trace);
    CHECK(verdict.trigger);
    CHECK(verdict.dimensions->at("completeness_relevance") == "fail");
}

TEST_CASE("malformed audit output twice triggers conservatively") {
    Engine e;
    e.rig.backend->register_script(tpl::quality_audit, "completely wrong");
    ContextSet ctx;
    ctx.groups = {{"Alice", {}}, {"Bob", {}}};
    AnswerTrace trace;
    auto verdict = e.engine->quality_audit("q", ctx, "a", trace);
    CHECK(verdict.trigger);
    CHECK_FALSE(verdict.dimensions.has_value());
    CHECK(trace.parse_degradations == 1);
}

TEST_CASE("audit missing a dimension key is treated as unusable") {
    Engine e;
    e.rig.backend->register_script(tpl::quality_audit,
                                   R"({"relevance": {"status": "pass"}})");
    ContextSet ctx;
    ctx.groups = {{"Alice", {}}, {"Bob", {}}};
    AnswerTrace trace;
    CHECK(e.engine->quality_audit("q", ctx, "a", trace).trigger);
}

TEST_CASE("always-fast policy behaves exactly like the fast path") {
    Engine e;
    e.rig.backend->register_script(tpl::answer_generation, "fast answer", Usage{20, 3});
    auto conv = ts::make_conv(4);

    auto via_policy = e.engine->answer(conv, "q", parse_policy("fast"));
    auto direct = e.mem0->answer_fast_path(conv, "q", false);

    CHECK(via_policy.final_answer == direct.final_answer);
    CHECK(via_policy.path == Path::Fast);
    CHECK_FALSE(via_policy.gate_triggered);
    CHECK(via_policy.totals().total() == direct.totals().total());
    CHECK(via_policy.calls.size() == direct.calls.size());
    CHECK(via_policy.policy == "always-fast");
}

TEST_CASE("always-deliberate policy behaves exactly like deliberation") {
    Engine e;
    e.rig.backend->register_script(tpl::fact_extraction, R"({"facts": []})");
    e.rig.backend->register_script(tpl::answer_generation, "slow answer", Usage{100, 5});
    auto conv = ts::make_conv(120);

    auto via_policy = e.engine->answer(conv, "q", parse_policy("deliberate"));
    auto direct = e.deliberator->deliberate(conv, "q");

    CHECK(via_policy.final_answer == direct.final_answer);
    CHECK(via_policy.path == Path::Fallback);
    CHECK(via_policy.gate_triggered);
    CHECK(via_policy.totals().total() == direct.totals().total());
    CHECK(via_policy.policy == "always-deliberate");
}

TEST_CASE("quality policy with an all-pass audit stays on the fast path") {
    Engine e;
    e.rig.backend->register_script(tpl::answer_generation, "A_init");
    e.rig.backend->register_script(tpl::quality_audit, kAllPass);
    auto trace = e.engine->answer(ts::make_conv(4), "q", parse_policy("quality"));
    CHECK(trace.path == Path::Fast);
    CHECK_FALSE(trace.gate_triggered);
    CHECK(trace.final_answer == "A_init");
    CHECK(trace.a_init == "A_init"); // byte-identical coupling
    CHECK(trace.count_calls(tpl::fact_extraction) == 0);
}

TEST_CASE("quality policy failing the audit escalates to deliberation") {
    Engine e;
    e.rig.backend->register_script(tpl::answer_generation,
                                   {Cond{"speaker_1_memories", Cond::Op::Contains, "(none)"}},
                                   {{"A_init", std::nullopt, 0.0}});
    e.rig.backend->register_script(tpl::answer_generation, "deliberated answer");
    e.rig.backend->register_script(tpl::quality_audit,
                                   R"({"relevance": {"status": "fail"},
                                       "faithfulness": {"status": "pass"},
                                       "completeness_relevance": {"status": "pass"}})");
    e.rig.backend->register_script(tpl::fact_extraction,
                                   R"({"facts": [{"fact": "a useful fact", "score": 9}]})");

    auto conv = ts::make_conv(130); // 3 chunks
    auto trace = e.engine->answer(conv, "q", parse_policy("quality"));
    CHECK(trace.path == Path::Fallback);
    CHECK(trace.gate_triggered);
    CHECK(trace.a_init == "A_init");
    CHECK(trace.final_answer == "deliberated answer");
    CHECK(trace.count_calls(tpl::fact_extraction) == 3);
    CHECK(trace.context_role == "facts");
}

TEST_CASE("majority policy routes to fast on consensus, fallback otherwise") {
    auto conv = ts::make_conv(60);

    Engine agree;
    agree.rig.backend->register_script(tpl::answer_generation, "A");
    agree.rig.backend->register_script(tpl::majority_judge,
                                       R"({"consensus": true, "answer": "A"})");
    auto t1 = agree.engine->answer(conv, "q", parse_policy("majority"));
    CHECK(t1.path == Path::Fast);
    CHECK(t1.final_answer == "A");
    CHECK(t1.candidates.size() == 3);
    CHECK(t1.count_calls(tpl::fact_extraction) == 0);

    Engine disagree;
    disagree.rig.backend->register_script(tpl::answer_generation, std::vector<Cond>{},
                                          {{"A", std::nullopt, 0.0},
                                           {"B", std::nullopt, 0.0},
                                           {"C", std::nullopt, 0.0},
                                           {"fallback answer", std::nullopt, 0.0}});
    disagree.rig.backend->register_script(tpl::majority_judge, R"({"consensus": false})");
    disagree.rig.backend->register_script(tpl::fact_extraction, R"({"facts": []})");
    auto t2 = disagree.engine->answer(conv, "q", parse_policy("majority"));
    CHECK(t2.path == Path::Fallback);
    CHECK(t2.gate_triggered);
    CHECK(t2.final_answer == "fallback answer");
    CHECK(t2.count_calls(tpl::fact_extraction) == 1);
}

TEST_CASE("consensus fallback set contains the majority fallback set") {
    // Exact-string equivalence oracle over scripted candidate triples.
    std::vector<std::array<std::string, 3>> triples = {
        {"A", "A", "A"}, {"A", "A", "B"}, {"A", "B", "A"}, {"B", "A", "A"},
        {"A", "B", "C"}, {"X", "X", "X"}, {"1", "2", "1"}, {"p", "q", "r"}};

    std::set<size_t> majority_fallback, consensus_fallback;
    for (size_t qi = 0; qi < triples.size(); ++qi) {
        const auto& tr = triples[qi];
        auto eq = [](const std::string& a, const std::string& b) { return a == b; };
        // Majority: any pair equal. Consensus: all three equal.
        bool maj = eq(tr[0], tr[1]) || eq(tr[0], tr[2]) || eq(tr[1], tr[2]);
        bool con = eq(tr[0], tr[1]) && eq(tr[1], tr[2]);
        std::string maj_resp = maj ? json{{"consensus", true},
                                          {"answer", eq(tr[0], tr[1]) || eq(tr[0], tr[2]) ? tr[0] : tr[1]}}
                                         .dump()
                                   : json{{"consensus", false}}.dump();
        std::string con_resp =
            con ? json{{"consensus", true}, {"answer", tr[0]}}.dump() : json{{"consensus", false}}.dump();

        Engine e;
        e.rig.backend->register_script(tpl::answer_generation, std::vector<Cond>{},
                                       {{tr[0], std::nullopt, 0.0},
                                        {tr[1], std::nullopt, 0.0},
                                        {tr[2], std::nullopt, 0.0},
                                        {"fb", std::nullopt, 0.0}});
        e.rig.backend->register_script(tpl::majority_judge, maj_resp);
        e.rig.backend->register_script(tpl::consensus_judge, con_resp);
        e.rig.backend->register_script(tpl::fact_extraction, R"({"facts": []})");

        auto conv = ts::make_conv(10);
        std::string query = "q" + std::to_string(qi);
        if (e.engine->answer(conv, query, parse_policy("majority")).path == Path::Fallback)
            majority_fallback.insert(qi);

        Engine e2;
        e2.rig.backend->register_script(tpl::answer_generation, std::vector<Cond>{},
                                        {{tr[0], std::nullopt, 0.0},
                                         {tr[1], std::nullopt, 0.0},
                                         {tr[2], std::nullopt, 0.0},
                                         {"fb", std::nullopt, 0.0}});
        e2.rig.backend->register_script(tpl::majority_judge, maj_resp);
        e2.rig.backend->register_script(tpl::consensus_judge, con_resp);
        e2.rig.backend->register_script(tpl::fact_extraction, R"({"facts": []})");
        if (e2.engine->answer(conv, query, parse_policy("consensus")).path == Path::Fallback)
            consensus_fallback.insert(qi);
    }

    for (size_t qi : majority_fallback) CHECK(consensus_fallback.count(qi) == 1);
    CHECK(consensus_fallback.size() >= majority_fallback.size());
}

TEST_CASE("fallback traces cost at least as much as fast traces for the same query") {
    auto conv = ts::make_conv(60);

    Engine fast;
    fast.rig.backend->register_script(tpl::answer_generation, "ans", Usage{50, 5});
    auto t_fast = fast.engine->answer(conv, "q", parse_policy("fast"));

    Engine slow;
    slow.rig.backend->register_script(tpl::answer_generation, "ans", Usage{50, 5});
    slow.rig.backend->register_script(tpl::fact_extraction,
                                      R"({"facts": [{"fact": "f", "score": 9}]})", Usage{400, 30});
    auto t_slow = slow.engine->answer(conv, "q", parse_policy("deliberate"));

    CHECK(t_slow.totals().total() >= t_fast.totals().total());
}

TEST_CASE("routing soundness: the path matches the gate verdict") {
    auto conv = ts::make_conv(60);
    for (const char* name : {"fast", "filter", "majority", "consensus", "quality", "deliberate"}) {
        Engine e;
        e.rig.backend->register_script(tpl::memory_filter, "[1]");
        e.rig.backend->register_script(tpl::answer_generation, "A");
        e.rig.backend->register_script(tpl::majority_judge, R"({"consensus": true, "answer": "A"})");
        e.rig.backend->register_script(tpl::consensus_judge, R"({"consensus": false})");
        e.rig.backend->register_script(tpl::quality_audit, kAllPass);
        e.rig.backend->register_script(tpl::fact_extraction, R"({"facts": []})");
        auto trace = e.engine->answer(conv, "q", parse_policy(name));
        INFO(name);
        CHECK((trace.path == Path::Fallback) == trace.gate_triggered);
        if (trace.path == Path::Fast) CHECK(trace.count_calls(tpl::fact_extraction) == 0);
        if (trace.path == Path::Fallback) CHECK(trace.count_calls(tpl::fact_extraction) > 0);
    }
}
