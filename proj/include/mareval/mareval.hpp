#pragma once

// Umbrella header: the whole multimodal analogical-reasoning harness.

#include "mareval/util.hpp"
#include "mareval/jsonl.hpp"
#include "mareval/kg.hpp"
#include "mareval/image.hpp"
#include "mareval/mapper.hpp"
#include "mareval/eval.hpp"
#include "mareval/prompt.hpp"
#include "mareval/client.hpp"
#include "mareval/ftdata.hpp"
#include "mareval/run.hpp"
