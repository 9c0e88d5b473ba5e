#pragma once

#include "earl/baselines.hpp"
#include "earl/core.hpp"
#include "earl/csv.hpp"
#include "earl/errors.hpp"
#include "earl/estimator.hpp"
#include "earl/inference.hpp"
#include "earl/losses.hpp"
#include "earl/nuisance.hpp"
#include "earl/parallel.hpp"
#include "earl/sim.hpp"
#include "earl/value.hpp"
#include "earl/weights.hpp"
