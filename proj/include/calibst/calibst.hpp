#pragma once

#include "calibst/core_types.hpp"
#include "calibst/special_functions.hpp"
#include "calibst/random.hpp"
#include "calibst/losses.hpp"
#include "calibst/calibration.hpp"
#include "calibst/metrics.hpp"
#include "calibst/toytracker.hpp"
#include "calibst/io.hpp"
#include "calibst/pipeline.hpp"
