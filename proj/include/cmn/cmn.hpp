#pragma once

// Convenience umbrella: the whole library.

#include "cmn/baselines.hpp"
#include "cmn/config.hpp"
#include "cmn/consolidation.hpp"
#include "cmn/digest.hpp"
#include "cmn/harness.hpp"
#include "cmn/layers.hpp"
#include "cmn/metrics.hpp"
#include "cmn/model.hpp"
#include "cmn/rng.hpp"
#include "cmn/tasks.hpp"
#include "cmn/tensor.hpp"
#include "cmn/trainer.hpp"
#include "cmn/transfer_cell.hpp"
