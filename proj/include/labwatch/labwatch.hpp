#pragma once

// Umbrella header: anomaly monitoring for scripted laboratory workflows with
// vision-language models. Workflow model, leveled prompt assembly, provider
// client, response parsing, evaluation metrics, and the checkpoint monitor.

#include "labwatch/client.hpp"
#include "labwatch/error.hpp"
#include "labwatch/eval.hpp"
#include "labwatch/image.hpp"
#include "labwatch/monitor.hpp"
#include "labwatch/parser.hpp"
#include "labwatch/prompt.hpp"
#include "labwatch/workflow.hpp"
