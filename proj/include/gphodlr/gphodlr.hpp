#pragma once

#include "gphodlr/errors.hpp"
#include "gphodlr/random.hpp"
#include "gphodlr/bessel.hpp"
#include "gphodlr/kernel.hpp"
#include "gphodlr/parallel.hpp"
#include "gphodlr/geometry.hpp"
#include "gphodlr/linalg.hpp"
#include "gphodlr/hodlr.hpp"
#include "gphodlr/factor.hpp"
#include "gphodlr/derivatives.hpp"
#include "gphodlr/likelihood.hpp"
#include "gphodlr/oracle.hpp"
#include "gphodlr/optimize.hpp"
#include "gphodlr/fit.hpp"
#include "gphodlr/experiments.hpp"
#include "gphodlr/version.hpp"
