#pragma once

#include "pscox/analysis.hpp"
#include "pscox/cohort.hpp"
#include "pscox/coxfit.hpp"
#include "pscox/errors.hpp"
#include "pscox/propensity.hpp"
#include "pscox/report.hpp"
#include "pscox/rng.hpp"
#include "pscox/simulation.hpp"
#include "pscox/variance.hpp"
