#pragma once

// Umbrella header. The HTTP backend is not included here because it pulls in
// the whole httplib header; include lookback/http_backend.hpp where needed.

#include "lookback/action.hpp"
#include "lookback/backend.hpp"
#include "lookback/base64.hpp"
#include "lookback/datagen.hpp"
#include "lookback/error.hpp"
#include "lookback/eval.hpp"
#include "lookback/manifest.hpp"
#include "lookback/matching.hpp"
#include "lookback/memory.hpp"
#include "lookback/planner.hpp"
#include "lookback/prompts.hpp"
#include "lookback/trajectory.hpp"
#include "lookback/turn.hpp"
#include "lookback/util.hpp"
#include "lookback/validate.hpp"
#include "lookback/version.hpp"
