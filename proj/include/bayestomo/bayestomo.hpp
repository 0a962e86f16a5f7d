#pragma once

#include "bayestomo/errors.hpp"
#include "bayestomo/grid.hpp"
#include "bayestomo/beams.hpp"
#include "bayestomo/priors.hpp"
#include "bayestomo/inference.hpp"
#include "bayestomo/resolution.hpp"
#include "bayestomo/io.hpp"
#include "bayestomo/experiments.hpp"
