#pragma once

#include "slowfast/analysis.hpp"
#include "slowfast/averaging.hpp"
#include "slowfast/benchmarks.hpp"
#include "slowfast/common.hpp"
#include "slowfast/experiment.hpp"
#include "slowfast/integrator.hpp"
#include "slowfast/io.hpp"
#include "slowfast/model.hpp"
#include "slowfast/rng.hpp"
#include "slowfast/switching.hpp"
