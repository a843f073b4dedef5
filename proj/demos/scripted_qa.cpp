// Minimal end-to-end walkthrough on the scripted backend: ingest two turns,
// then answer one question under quality gating and print the trace.

#include <iostream>
#include <memory>

#include "dmem/dmem.hpp"

using namespace dmem;

int main() {
    auto backend = std::make_shared<ScriptedBackend>(64);
    auto prompts = std::make_shared<PromptLibrary>(std::string(DMEM_SOURCE_DIR) + "/assets/prompts");
    Gateway gateway(backend, prompts);

    backend->register_script(
        tpl::memory_extraction,
        R"({"memories": [{"text": "Dana ran her first 10k on 3 March 2024.", "speaker": "Dana"}]})");
    backend->register_script(
        tpl::memory_update,
        R"({"operations": [{"op": "ADD", "text": "Dana ran her first 10k on 3 March 2024.", "owner": "Dana"}]})");
    backend->register_script(tpl::answer_generation, "3 March 2024");
    backend->register_script(tpl::quality_audit,
                             R"({"relevance": {"status": "pass"},
                                 "faithfulness": {"status": "pass"},
                                 "completeness_relevance": {"status": "pass"}})");

    Conversation conv;
    conv.id = "demo";
    conv.speakers = {"Dana", "Eli"};
    conv.messages = {
        {0, "Dana", "9:00 am on 3 March, 2024", "I ran my first 10k this morning!"},
        {1, "Eli", "9:05 am on 3 March, 2024", "Congratulations, that's huge!"},
    };

    MemoryStore store(gateway.embedding_dimension());
    Mem0Star mem0(store, gateway);
    Deliberator deliberator(mem0, gateway);
    DMemEngine engine(mem0, deliberator, gateway);

    mem0.ingest_turn(conv, 1);
    std::cout << "store holds " << store.size() << " memory\n";

    AnswerTrace trace = engine.answer(conv, "When did Dana run her first 10k?",
                                      parse_policy("quality"));
    std::cout << "answer: " << trace.final_answer << "\n";
    std::cout << "path:   " << to_string(trace.path) << "\n";
    std::cout << "tokens: " << trace.totals().total() << "\n";
    return 0;
}
