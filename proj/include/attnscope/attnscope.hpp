#pragma once

// Umbrella header for the engine (everything except the HTTP transport).

#include "attnscope/analysis.hpp"
#include "attnscope/checkpoint.hpp"
#include "attnscope/error.hpp"
#include "attnscope/serialize.hpp"
#include "attnscope/service.hpp"
#include "attnscope/tensor.hpp"
#include "attnscope/tokenizer.hpp"
#include "attnscope/transformer.hpp"
#include "attnscope/views.hpp"
