#pragma once

// Umbrella header for the D-Mem dual-process conversational memory engine.

#include "dmem/config.hpp"
#include "dmem/conversation.hpp"
#include "dmem/dataset.hpp"
#include "dmem/deliberation.hpp"
#include "dmem/errors.hpp"
#include "dmem/evaluation.hpp"
#include "dmem/gateway.hpp"
#include "dmem/gating.hpp"
#include "dmem/mem0star.hpp"
#include "dmem/memory_store.hpp"
#include "dmem/metrics.hpp"
#include "dmem/prompts.hpp"
#include "dmem/trace.hpp"
