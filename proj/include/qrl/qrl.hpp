#pragma once

#include "qrl/copula.hpp"
#include "qrl/covariance.hpp"
#include "qrl/csv.hpp"
#include "qrl/estimator.hpp"
#include "qrl/inference.hpp"
#include "qrl/json_io.hpp"
#include "qrl/km.hpp"
#include "qrl/parallel.hpp"
#include "qrl/rng.hpp"
#include "qrl/simulation.hpp"
#include "qrl/stats.hpp"
#include "qrl/types.hpp"
#include "qrl/variance.hpp"
#include "qrl/wqr.hpp"
