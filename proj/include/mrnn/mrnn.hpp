#pragma once

// Umbrella header: the full library in dependency order.

#include "mrnn/errors.hpp"
#include "mrnn/rng.hpp"
#include "mrnn/autodiff.hpp"
#include "mrnn/grad_check.hpp"
#include "mrnn/mixture.hpp"
#include "mrnn/oracles.hpp"
#include "mrnn/cells.hpp"
#include "mrnn/model.hpp"
#include "mrnn/optim.hpp"
#include "mrnn/metrics.hpp"
#include "mrnn/data.hpp"
#include "mrnn/train.hpp"
#include "mrnn/checkpoint.hpp"
#include "mrnn/experiment.hpp"
