#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "dmem/gateway.hpp"
#include "dmem/json_util.hpp"
#include "dmem/memory_store.hpp"
#include "dmem/trace.hpp"
#include "test_support.hpp"

using namespace dmem;
namespace ts = test_support;

TEST_CASE("registered script answers matching requests") {
    auto rig = ts::make_rig();
    rig.backend->register_script(tpl::answer_judge, "{\"label\": \"CORRECT\"}");
    ChatRequest req;
    req.template_id = tpl::answer_judge;
    req.variables = {{"question", "q"}, {"gold_answer", "g"}, {"generated_answer", "p"}};
    CHECK(rig.gateway->chat(req).text == "{\"label\": \"CORRECT\"}");
}

TEST_CASE("first registered matching rule wins") {
    auto rig = ts::make_rig();
    rig.backend->register_script(tpl::answer_judge, "first");
    rig.backend->register_script(tpl::answer_judge, "second");
    ChatRequest req;
    req.template_id = tpl::answer_judge;
    req.variables = {{"question", "q"}, {"gold_answer", "g"}, {"generated_answer", "p"}};
    CHECK(rig.gateway->chat(req).text == "first");
}

TEST_CASE("conditions narrow a rule to matching variables") {
    auto rig = ts::make_rig();
    rig.backend->register_script(
        tpl::answer_judge, std::vector<ScriptedBackend::Condition>{{"question", ScriptedBackend::Condition::Op::Contains, "hiking"}},
        {{"{\"label\": \"WRONG\"}", std::nullopt, 0.0}});
    rig.backend->register_script(tpl::answer_judge, "{\"label\": \"CORRECT\"}");

    ChatRequest hiking;
    hiking.template_id = tpl::answer_judge;
    hiking.variables = {{"question", "about hiking"}, {"gold_answer", "g"}, {"generated_answer", "p"}};
    CHECK(rig.gateway->chat(hiking).text == "{\"label\": \"WRONG\"}");

    ChatRequest other;
    other.template_id = tpl::answer_judge;
    other.variables = {{"question", "about food"}, {"gold_answer", "g"}, {"generated_answer", "p"}};
    CHECK(rig.gateway->chat(other).text == "{\"label\": \"CORRECT\"}");
}

TEST_CASE("unmatched scripted request raises script-miss naming the template") {
    auto rig = ts::make_rig();
    ChatRequest req;
    req.template_id = tpl::answer_judge;
    req.variables = {{"question", "q"}, {"gold_answer", "g"}, {"generated_answer", "p"}};
    CHECK_THROWS_WITH(rig.gateway->chat(req),
                      Catch::Matchers::ContainsSubstring("answer_judge"));
}

TEST_CASE("multi-response rules cycle in order") {
    auto rig = ts::make_rig();
    rig.backend->register_script(tpl::answer_judge, std::vector<ScriptedBackend::Condition>{},
                                 {{"A", std::nullopt, 0.0},
                                  {"A", std::nullopt, 0.0},
                                  {"B", std::nullopt, 0.0}});
    ChatRequest req;
    req.template_id = tpl::answer_judge;
    req.variables = {{"question", "q"}, {"gold_answer", "g"}, {"generated_answer", "p"}};
    std::vector<std::string> got;
    for (int i = 0; i < 4; ++i) got.push_back(rig.gateway->chat(req).text);
    CHECK(got == std::vector<std::string>{"A", "A", "B", "A"});
}

TEST_CASE("scripted usage flows through; missing usage falls back to the heuristic") {
    auto rig = ts::make_rig();
    rig.backend->register_script(tpl::answer_judge, "priced", Usage{10, 5}, 0.25);
    rig.backend->register_script(tpl::fact_filter, "unpriced response");

    ChatRequest priced;
    priced.template_id = tpl::answer_judge;
    priced.variables = {{"question", "q"}, {"gold_answer", "g"}, {"generated_answer", "p"}};
    auto r1 = rig.gateway->chat(priced);
    CHECK(r1.usage.prompt_tokens == 10);
    CHECK(r1.usage.completion_tokens == 5);
    CHECK(r1.usage.total() == 15);
    CHECK_FALSE(r1.usage_estimated);
    CHECK(r1.latency_s == 0.25);

    ChatRequest unpriced;
    unpriced.template_id = tpl::fact_filter;
    unpriced.variables = {{"question", "q"}, {"memory_items", "1. a"}};
    auto r2 = rig.gateway->chat(unpriced);
    std::string rendered = rig.gateway->render(tpl::fact_filter, unpriced.variables);
    CHECK(r2.usage_estimated);
    CHECK(r2.usage.prompt_tokens == static_cast<int64_t>((rendered.size() + 3) / 4));
    CHECK(r2.usage.completion_tokens ==
          static_cast<int64_t>((std::string("unpriced response").size() + 3) / 4));
}

TEST_CASE("trace totals equal the sum of per-call usage exactly") {
    AnswerTrace trace;
    trace.calls.push_back({"chat", "a", {10, 5}, 0.1, false});
    trace.calls.push_back({"embed", "", {7, 0}, 0.0, false});
    trace.calls.push_back({"chat", "b", {123, 45}, 0.3, true});
    CHECK(trace.totals().prompt_tokens == 140);
    CHECK(trace.totals().completion_tokens == 50);
    CHECK(trace.totals().total() == 190);
    CHECK(trace.latency_seconds() == Catch::Approx(0.4).margin(1e-12));
}

TEST_CASE("scripted embeddings are pure and unit length") {
    auto rig = ts::make_rig();
    auto r = rig.gateway->embed({"a", "a", "b"});
    REQUIRE(r.vectors.size() == 3);
    CHECK(r.vectors[0] == r.vectors[1]);
    CHECK(r.vectors[0] != r.vectors[2]);
    double norm = 0;
    for (double v : r.vectors[0]) norm += v * v;
    CHECK(norm == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("embedding rejects empty inputs") {
    auto rig = ts::make_rig();
    CHECK_THROWS_AS(rig.gateway->embed({}), InvalidArgument);
    CHECK_THROWS_AS(rig.gateway->embed({""}), InvalidArgument);
}

TEST_CASE("scripted embeddings match the frozen golden values") {
    auto golden = json::parse(ts::read_file(ts::golden_dir() + "/scripted_embed.json"));
    auto x = scripted_embedding("x", 64);
    auto y = scripted_embedding("y", 64);
    CHECK(cosine(x, y) == Catch::Approx(golden["cosine_x_y"].get<double>()).margin(1e-12));
    auto head = golden["x_head"].get<std::vector<double>>();
    for (size_t i = 0; i < head.size(); ++i)
        CHECK(x[i] == Catch::Approx(head[i]).margin(1e-12));
    CHECK(cosine(x, y) < 1.0);
}

TEST_CASE("json extraction handles fences, chatter and nesting") {
    CHECK(extract_json("{\"a\": 1}")->at("a") == 1);
    CHECK(extract_json("```json\n{\"a\": [1, 2]}\n```")->at("a")[1] == 2);
    CHECK(extract_json("Sure! Here you go: {\"outer\": {\"inner\": \"}\"}} trailing")
              ->at("outer")
              .at("inner") == "}");
    CHECK(extract_json("pick [1, 3] please")->at(1) == 3);
    CHECK_FALSE(extract_json("no json here").has_value());
    CHECK_FALSE(extract_json("{broken").has_value());
    // Recovers when the first brace-like region is not valid JSON.
    CHECK(extract_json("weird {not json} but {\"ok\": true}")->at("ok") == true);
}

TEST_CASE("chat_json retries once then degrades") {
    auto rig = ts::make_rig();
    rig.backend->register_script(tpl::fact_filter, "not json at all");
    ChatRequest req;
    req.template_id = tpl::fact_filter;
    req.variables = {{"question", "q"}, {"memory_items", "1. a"}};
    auto res = rig.gateway->chat_json(req);
    CHECK(res.degraded);
    CHECK_FALSE(res.value.has_value());
    CHECK(res.calls.size() == 2);

    auto rig2 = ts::make_rig();
    rig2.backend->register_script(tpl::fact_filter, "{\"indexes\": [1]}");
    auto ok = rig2.gateway->chat_json(req);
    CHECK_FALSE(ok.degraded);
    CHECK(ok.calls.size() == 1);
    CHECK((*ok.value)["indexes"][0] == 1);
}

TEST_CASE("rule files load conditions, sequences and usage") {
    auto rig = ts::make_rig();
    json doc = json::parse(R"({
      "dimension": 64,
      "rules": [
        {"template": "answer_judge",
         "when": [{"var": "question", "contains": "hiking"}],
         "respond": {"text": "{\"label\": \"WRONG\"}", "prompt_tokens": 9, "completion_tokens": 2}},
        {"template": "answer_judge",
         "respond_seq": [{"text": "one"}, {"text": "two"}]}
      ]})");
    rig.backend->load_rules(doc);

    ChatRequest hiking;
    hiking.template_id = tpl::answer_judge;
    hiking.variables = {{"question", "hiking trip"}, {"gold_answer", "g"}, {"generated_answer", "p"}};
    auto r = rig.gateway->chat(hiking);
    CHECK(r.usage.prompt_tokens == 9);

    ChatRequest other;
    other.template_id = tpl::answer_judge;
    other.variables = {{"question", "food"}, {"gold_answer", "g"}, {"generated_answer", "p"}};
    CHECK(rig.gateway->chat(other).text == "one");
    CHECK(rig.gateway->chat(other).text == "two");
    CHECK(rig.gateway->chat(other).text == "one");
}
