#pragma once

#include "ldcap/error.hpp"
#include "ldcap/grid_model.hpp"
#include "ldcap/random.hpp"
#include "ldcap/injections.hpp"
#include "ldcap/thermal.hpp"
#include "ldcap/ld_rates.hpp"
#include "ldcap/exact1d.hpp"
#include "ldcap/polygon.hpp"
#include "ldcap/region.hpp"
#include "ldcap/montecarlo.hpp"
#include "ldcap/io_formats.hpp"
